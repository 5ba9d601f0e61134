#pragma once

namespace mancount {

/// A point annotation in input-pixel coordinates.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

}  // namespace mancount
