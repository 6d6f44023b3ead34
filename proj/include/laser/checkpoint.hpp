#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laser/attention.hpp"
#include "laser/matrix.hpp"

namespace laser {

// Binary parameter container. Layout: magic "LASR", format version u16,
// the config block as fixed-width little-endian scalars, then tensors
// until EOF, each as (name_len u16, name bytes, rank u8, dims u32 each,
// f32 little-endian payload). Round-trips bit-exactly.

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

struct Checkpoint {
    LaserConfig config;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
    NamedTensor& add(const std::string& name, std::vector<std::uint32_t> dims);
    void add_matrix(const std::string& name, const Matrix& m);
    void add_vector(const std::string& name, const Vector& v);
    Matrix matrix(const std::string& name) const;  // throws if absent/misshaped
    Vector vector(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// LaserParams <-> named tensors under the conventional names.
void put_laser_params(Checkpoint& ck, const LaserParams& params);
LaserParams get_laser_params(const Checkpoint& ck);

}  // namespace laser
