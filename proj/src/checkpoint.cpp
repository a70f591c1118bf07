#include "hashlat/core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hashlat/core/errors.hpp"

namespace hashlat {

namespace {

constexpr uint32_t kMagic = 0x48434844u;  // "DHCH"
constexpr uint32_t kVersion = 1;
constexpr uint8_t kTypeF64 = 0;
constexpr uint8_t kTypeI64 = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint16_t>(os, static_cast<uint16_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    auto len = read_pod<uint16_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw IoError("checkpoint: truncated name");
    return s;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) { f64_[name] = t; }

void Checkpoint::put(const std::string& name, const std::vector<int64_t>& shape,
                     const std::vector<double>& data) {
    f64_[name] = Tensor(shape, data);
}

void Checkpoint::put_i64(const std::string& name, const std::vector<int64_t>& values) {
    i64_[name] = values;
}

void Checkpoint::put_scalar(const std::string& name, double value) {
    f64_[name] = Tensor({1}, {value});
}

bool Checkpoint::has(const std::string& name) const {
    return f64_.count(name) > 0 || i64_.count(name) > 0;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = f64_.find(name);
    if (it == f64_.end()) throw IoError("checkpoint: missing array '" + name + "'");
    return it->second;
}

const std::vector<int64_t>& Checkpoint::get_i64(const std::string& name) const {
    auto it = i64_.find(name);
    if (it == i64_.end()) throw IoError("checkpoint: missing i64 array '" + name + "'");
    return it->second;
}

double Checkpoint::get_scalar(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.numel() != 1) throw IoError("checkpoint: '" + name + "' is not a scalar");
    return t[0];
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : f64_) out.push_back(k);
    for (const auto& [k, v] : i64_) out.push_back(k);
    return out;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for write: " + path);
    write_pod(os, kMagic);
    write_pod(os, kVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(f64_.size() + i64_.size()));
    for (const auto& [name, t] : f64_) {
        write_string(os, name);
        write_pod(os, kTypeF64);
        write_pod<uint8_t>(os, static_cast<uint8_t>(t.shape().size()));
        for (int64_t d : t.shape()) write_pod(os, d);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    for (const auto& [name, v] : i64_) {
        write_string(os, name);
        write_pod(os, kTypeI64);
        write_pod<uint8_t>(os, 1);
        write_pod<int64_t>(os, static_cast<int64_t>(v.size()));
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(int64_t)));
    }
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    if (read_pod<uint32_t>(is) != kMagic) throw IoError("checkpoint: bad magic: " + path);
    uint32_t version = read_pod<uint32_t>(is);
    if (version != kVersion) throw IoError("checkpoint: unsupported version");
    uint32_t count = read_pod<uint32_t>(is);
    Checkpoint ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(is);
        uint8_t type = read_pod<uint8_t>(is);
        uint8_t ndim = read_pod<uint8_t>(is);
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = read_pod<int64_t>(is);
        int64_t numel = Tensor::checked_numel(shape);
        if (type == kTypeF64) {
            std::vector<double> data(static_cast<size_t>(numel));
            is.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(double)));
            if (!is) throw IoError("checkpoint: truncated payload");
            ckpt.f64_[name] = Tensor(shape, std::move(data));
        } else if (type == kTypeI64) {
            std::vector<int64_t> data(static_cast<size_t>(numel));
            is.read(reinterpret_cast<char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(int64_t)));
            if (!is) throw IoError("checkpoint: truncated payload");
            ckpt.i64_[name] = std::move(data);
        } else {
            throw IoError("checkpoint: unknown array type");
        }
    }
    return ckpt;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
    if (i64_ != other.i64_) return false;
    if (f64_.size() != other.f64_.size()) return false;
    for (const auto& [name, t] : f64_) {
        auto it = other.f64_.find(name);
        if (it == other.f64_.end()) return false;
        if (t.shape() != it->second.shape()) return false;
        if (std::memcmp(t.data(), it->second.data(),
                        static_cast<size_t>(t.numel()) * sizeof(double)) != 0)
            return false;
    }
    return true;
}

}  // namespace hashlat
