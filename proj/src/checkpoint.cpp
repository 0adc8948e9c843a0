#include "nearl/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nearl/error.hpp"

namespace nearl {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr std::string_view kMagic = "NEARL1";

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Cursor {
public:
    explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

    void need(std::size_t n, const std::string& what) const {
        if (bytes_.size() - pos_ < n) fail(ErrorKind::truncated, "checkpoint truncated in " + what);
    }
    template <typename T>
    T get(const std::string& what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::string take(std::size_t n, const std::string& what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    std::string out(kMagic);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        for (double v : t.values()) put<double>(out, v);
    }
    return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < kMagic.size() || bytes.compare(0, kMagic.size(), kMagic) != 0) {
        fail(ErrorKind::format, "not a NEARL1 checkpoint (bad magic)");
    }
    Cursor c(bytes);
    c.take(kMagic.size(), "magic");
    const auto count = c.get<std::uint64_t>("record count");
    std::vector<NamedTensor> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string where = "record " + std::to_string(i);
        const auto name_len = c.get<std::uint32_t>(where);
        std::string name = c.take(name_len, where);
        const auto rank = c.get<std::uint32_t>(where);
        if (rank > 8) fail(ErrorKind::format, "record '" + name + "' has implausible rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) {
            d = c.get<std::uint64_t>(where);
            if (d > bytes.size()) fail(ErrorKind::truncated, "checkpoint truncated in payload of '" + name + "'");
        }
        const std::size_t n = shape_numel(shape);
        c.need(n * sizeof(double), "payload of '" + name + "'");
        std::vector<double> values(n);
        for (auto& v : values) v = c.get<double>(where);
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    if (!c.at_end()) fail(ErrorKind::format, "trailing bytes after the last checkpoint record");
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::missing_file, "cannot write checkpoint to " + path.string());
    const std::string bytes = encode_checkpoint(tensors);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::missing_file, "checkpoint not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str());
}

std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& tensors) {
    std::vector<NamedTensor> out;
    out.reserve(tensors.size());
    for (const auto& [name, t] : tensors) out.push_back({name, t.detach()});
    return out;
}

void restore(Model& model, const std::vector<NamedTensor>& tensors) {
    auto targets = model.named();
    std::vector<NamedTensor> sorted = tensors;
    std::sort(sorted.begin(), sorted.end(),
              [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
    std::sort(targets.begin(), targets.end(),
              [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
    if (sorted.size() != targets.size()) {
        fail(ErrorKind::dim_mismatch, "checkpoint holds " + std::to_string(sorted.size()) +
                                          " tensors, model expects " + std::to_string(targets.size()));
    }
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i].name != targets[i].name) {
            fail(ErrorKind::dim_mismatch, "checkpoint tensor '" + sorted[i].name +
                                              "' does not match model tensor '" + targets[i].name + "'");
        }
        if (sorted[i].tensor.shape() != targets[i].tensor.shape()) {
            fail(ErrorKind::dim_mismatch, "checkpoint tensor '" + sorted[i].name + "' has shape " +
                                              shape_str(sorted[i].tensor.shape()) + ", model expects " +
                                              shape_str(targets[i].tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const auto src = sorted[i].tensor.values();
        auto dst = targets[i].tensor.mutable_values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace nearl
