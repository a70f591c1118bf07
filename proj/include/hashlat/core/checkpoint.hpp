#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hashlat/core/tensor.hpp"

namespace hashlat {

// Versioned binary dump of named, shape-headed arrays. The same format backs
// hash-model / HAN / backend checkpoints and latent dumps; round trips are
// exact (raw little-endian payloads).
class Checkpoint {
public:
    void put(const std::string& name, const Tensor& t);
    void put(const std::string& name, const std::vector<int64_t>& shape,
             const std::vector<double>& data);
    void put_i64(const std::string& name, const std::vector<int64_t>& values);
    void put_scalar(const std::string& name, double value);

    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    const std::vector<int64_t>& get_i64(const std::string& name) const;
    double get_scalar(const std::string& name) const;

    std::vector<std::string> names() const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    bool operator==(const Checkpoint& other) const;

private:
    std::map<std::string, Tensor> f64_;
    std::map<std::string, std::vector<int64_t>> i64_;
};

}  // namespace hashlat
