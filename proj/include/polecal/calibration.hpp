#pragma once

#include <map>

#include "polecal/errors.hpp"
#include "polecal/geometry.hpp"

namespace polecal {

/// How much of the calibration has been estimated so far.
enum class CalibrationStage { yaw_only, xy_yaw, full };

inline const char* to_string(CalibrationStage s) {
  switch (s) {
    case CalibrationStage::yaw_only: return "yaw_only";
    case CalibrationStage::xy_yaw: return "xy_yaw";
    case CalibrationStage::full: return "full";
  }
  return "unknown";
}

/// Per-sensor mounting poses (sensor frame -> vehicle frame) plus the stage
/// they were produced by.
struct CalibrationSet {
  std::map<int, RigidTransform> poses;
  CalibrationStage stage = CalibrationStage::yaw_only;
  double timestamp = 0.0;  // time of last update, seconds

  const RigidTransform& pose(int sensor_id) const {
    auto it = poses.find(sensor_id);
    if (it == poses.end()) {
      throw SensorMismatchError("calibration set has no sensor " +
                                std::to_string(sensor_id));
    }
    return it->second;
  }

  bool has(int sensor_id) const { return poses.count(sensor_id) > 0; }
};

}  // namespace polecal
