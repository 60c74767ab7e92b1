#pragma once

#include <string>

#include "jlcm/model.hpp"

namespace jlcm {

// JLCM container v1, little-endian:
//   magic "JLCM", u8 version = 1, u8 dtype (0 = f32, 1 = f16), u32 L;
//   L layer headers: u32 n_o, u32 n_i, u8 activation (0..2), u8 has_bias;
//   then, in layer order, the row-major weight blob followed by the bias
//   blob (when present), both in the stored dtype.
// f16 tensors are widened to f32 in memory on load.
ModelContainer load_container(const std::string& path);
void save_container(const ModelContainer& model, const std::string& path, StorageType dtype);

// Calibration file, little-endian: magic "JCAL", u32 B, u32 width,
// row-major f32 blob.
CalibrationSet load_calibration(const std::string& path);
void save_calibration(const CalibrationSet& calib, const std::string& path);

} // namespace jlcm
