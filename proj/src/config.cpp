#include "mancount/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace mancount {

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.dim = dim;
  m.layers = layers;
  m.ffn_hidden = ffn_hidden;
  m.backbone_c1 = backbone_c1;
  m.backbone_c2 = backbone_c2;
  m.use_lra = use_lra;
  return m;
}

void TrainConfig::validate() const {
  if (delta <= 0.0 || delta > 1.0) throw ConfigError("delta must lie in (0, 1]");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (sigma <= 0.0) throw ConfigError("sigma must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (max_token_grid < 1) throw ConfigError("max_token_grid must be >= 1");
  model().validate();
}

std::string TrainConfig::echo() const {
  std::ostringstream os;
  os << "dim=" << dim << " layers=" << layers << " ffn_hidden=" << model().ffn()
     << " use_lra=" << (use_lra ? "true" : "false") << " lr=" << lr
     << " steps=" << steps << " delta=" << delta << " lambda=" << lambda
     << " sigma=" << sigma << " seed=" << seed;
  return os.str();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& value, const std::string& key,
                    const std::string& origin, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw ParseError(origin + ": line " + std::to_string(line_no) +
                     ": bad numeric value \"" + value + "\" for key " + key);
  }
  return v;
}

bool parse_bool(const std::string& value, const std::string& key,
                const std::string& origin, int line_no) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError(origin + ": line " + std::to_string(line_no) +
                   ": bad boolean value \"" + value + "\" for key " + key);
}

}  // namespace

TrainConfig parse_train_config_text(const std::string& text,
                                    const std::string& origin) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + ": line " + std::to_string(line_no) +
                       ": expected \"key = value\"");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ParseError(origin + ": line " + std::to_string(line_no) +
                       ": expected \"key = value\"");
    }
    auto num = [&] { return parse_number(value, key, origin, line_no); };
    if (key == "lr") {
      cfg.lr = num();
    } else if (key == "beta1") {
      cfg.beta1 = num();
    } else if (key == "beta2") {
      cfg.beta2 = num();
    } else if (key == "adam_eps") {
      cfg.adam_eps = num();
    } else if (key == "steps") {
      cfg.steps = static_cast<int>(num());
    } else if (key == "delta") {
      cfg.delta = num();
    } else if (key == "lambda") {
      cfg.lambda = num();
    } else if (key == "layers") {
      cfg.layers = static_cast<int>(num());
    } else if (key == "dim") {
      cfg.dim = static_cast<int>(num());
    } else if (key == "ffn_hidden") {
      cfg.ffn_hidden = static_cast<int>(num());
    } else if (key == "backbone_c1") {
      cfg.backbone_c1 = static_cast<int>(num());
    } else if (key == "backbone_c2") {
      cfg.backbone_c2 = static_cast<int>(num());
    } else if (key == "sigma") {
      cfg.sigma = num();
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(num());
    } else if (key == "use_lra") {
      cfg.use_lra = parse_bool(value, key, origin, line_no);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = static_cast<int>(num());
    } else if (key == "max_token_grid") {
      cfg.max_token_grid = static_cast<int>(num());
    } else {
      throw ConfigError(origin + ": line " + std::to_string(line_no) +
                        ": unknown key \"" + key + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig parse_train_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_train_config_text(buffer.str(), path);
}

}  // namespace mancount
