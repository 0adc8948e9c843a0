#include "nearl/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nearl/error.hpp"
#include "nearl/rng.hpp"

namespace nearl {

namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr char kMagic[] = "NRLD1";
constexpr std::size_t kMagicLen = 5;
constexpr std::uint8_t kVersion = 1;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

class Writer {
public:
    template <typename T>
    void put(T value) {
        char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void raw(const char* data, std::size_t n) { out_.append(data, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > bytes_.size()) {
            fail(ErrorKind::truncated, std::string("dataset file truncated while reading ") + what);
        }
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::string raw(std::size_t n, const char* what) {
        if (pos_ + n > bytes_.size()) {
            fail(ErrorKind::truncated, std::string("dataset file truncated while reading ") + what);
        }
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::vector<double>> make_prototypes(const DatasetSpec& spec) {
    Rng rng = Rng(spec.seed).stream("prototypes");
    std::vector<std::vector<double>> protos(spec.n_classes, std::vector<double>(spec.patch_dim));
    for (auto& p : protos)
        for (auto& v : p) v = rng.normal();
    if (spec.n_classes < 2) return protos;
    double min_dist = INFINITY;
    for (std::size_t a = 0; a < protos.size(); ++a) {
        for (std::size_t b = a + 1; b < protos.size(); ++b) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < spec.patch_dim; ++j) {
                const double diff = protos[a][j] - protos[b][j];
                d2 += diff * diff;
            }
            min_dist = std::min(min_dist, std::sqrt(d2));
        }
    }
    // Rescale so the closest pair sits (just above) class_separation apart.
    const double factor = spec.class_separation / min_dist * (1.0 + 1e-12);
    for (auto& p : protos)
        for (auto& v : p) v *= factor;
    return protos;
}

Split make_split(const DatasetSpec& spec, const std::vector<std::vector<double>>& protos,
                 std::size_t count, const char* name) {
    Rng rng = Rng(spec.seed).stream(std::string("split.") + name);
    Split split;
    split.n_patches = spec.n_patches;
    split.patch_dim = spec.patch_dim;
    split.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) split.labels[i] = i % spec.n_classes;
    rng.shuffle(split.labels);

    const std::size_t signal = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(spec.signal_fraction * static_cast<double>(spec.n_patches))));
    const std::size_t per_image = spec.n_patches * spec.patch_dim;
    split.pixels.resize(count * per_image);
    std::vector<std::size_t> order(spec.n_patches);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t p = 0; p < spec.n_patches; ++p) order[p] = p;
        rng.shuffle(order);
        std::vector<bool> is_signal(spec.n_patches, false);
        for (std::size_t s = 0; s < signal; ++s) is_signal[order[s]] = true;
        const auto& proto = protos[split.labels[i]];
        double* img = split.pixels.data() + i * per_image;
        for (std::size_t p = 0; p < spec.n_patches; ++p) {
            for (std::size_t j = 0; j < spec.patch_dim; ++j) {
                const double base = is_signal[p] ? proto[j] : 0.0;
                img[p * spec.patch_dim + j] = to_f32(base + spec.noise_std * rng.normal());
            }
        }
    }
    return split;
}

void encode_split(Writer& w, const Split& s) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    const std::size_t per_image = s.n_patches * s.patch_dim;
    for (std::size_t i = 0; i < s.size(); ++i) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(s.labels[i]));
        for (std::size_t j = 0; j < per_image; ++j) w.put<float>(static_cast<float>(s.pixels[i * per_image + j]));
    }
}

Split decode_split(Reader& r, const DatasetSpec& spec, std::size_t expected, const char* name) {
    const auto count = r.get<std::uint32_t>("split header");
    if (count != expected) {
        fail(ErrorKind::format, std::string("split '") + name + "' holds " + std::to_string(count) +
                                    " samples, header declares " + std::to_string(expected));
    }
    Split s;
    s.n_patches = spec.n_patches;
    s.patch_dim = spec.patch_dim;
    const std::size_t per_image = spec.n_patches * spec.patch_dim;
    s.labels.resize(count);
    s.pixels.resize(count * per_image);
    for (std::size_t i = 0; i < count; ++i) {
        const auto label = r.get<std::uint32_t>("sample label");
        if (label >= spec.n_classes) {
            fail(ErrorKind::format, "sample label " + std::to_string(label) + " >= n_classes");
        }
        s.labels[i] = label;
        for (std::size_t j = 0; j < per_image; ++j) {
            const float v = r.get<float>("pixel payload");
            if (!std::isfinite(v)) fail(ErrorKind::format, "non-finite pixel value");
            s.pixels[i * per_image + j] = v;
        }
    }
    return s;
}

}  // namespace

void DatasetSpec::validate() const {
    const auto require = [](bool ok, const char* what) {
        if (!ok) fail(ErrorKind::config, what);
    };
    require(n_classes >= 1, "dataset n_classes must be >= 1");
    require(n_train >= 1 && n_val >= 1 && n_test >= 1, "every split needs at least one sample");
    require(n_patches >= 1 && patch_dim >= 1, "n_patches and patch_dim must be >= 1");
    require(signal_fraction > 0.0 && signal_fraction <= 1.0, "signal_fraction must lie in (0, 1]");
    require(noise_std >= 0.0 && std::isfinite(noise_std), "noise_std must be non-negative");
    require(class_separation > 0.0 && std::isfinite(class_separation), "class_separation must be positive");
}

std::span<const double> Split::image(std::size_t i) const {
    const std::size_t per_image = n_patches * patch_dim;
    return std::span<const double>(pixels).subspan(i * per_image, per_image);
}

Tensor Split::images(std::span<const std::size_t> indices) const {
    const std::size_t per_image = n_patches * patch_dim;
    std::vector<double> data;
    data.reserve(indices.size() * per_image);
    for (std::size_t i : indices) {
        const auto img = image(i);
        data.insert(data.end(), img.begin(), img.end());
    }
    return Tensor({indices.size(), n_patches, patch_dim}, std::move(data));
}

std::vector<std::size_t> Split::labels_at(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels[i]);
    return out;
}

Dataset gen_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    ds.prototypes = make_prototypes(spec);
    ds.train = make_split(spec, ds.prototypes, spec.n_train, "train");
    ds.val = make_split(spec, ds.prototypes, spec.n_val, "val");
    ds.test = make_split(spec, ds.prototypes, spec.n_test, "test");
    return ds;
}

std::string encode_dataset(const Dataset& ds) {
    Writer w;
    w.raw(kMagic, kMagicLen);
    w.put<std::uint8_t>(kVersion);
    const DatasetSpec& s = ds.spec;
    for (std::size_t v : {s.n_classes, s.n_train, s.n_val, s.n_test, s.n_patches, s.patch_dim}) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
    }
    w.put<double>(s.signal_fraction);
    w.put<double>(s.noise_std);
    w.put<double>(s.class_separation);
    w.put<std::uint64_t>(s.seed);
    encode_split(w, ds.train);
    encode_split(w, ds.val);
    encode_split(w, ds.test);
    return w.take();
}

Dataset decode_dataset(const std::string& bytes) {
    Reader r(bytes);
    if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) {
        fail(ErrorKind::format, "not an NRLD1 dataset (bad magic)");
    }
    r.raw(kMagicLen, "magic");
    const auto version = r.get<std::uint8_t>("version");
    if (version != kVersion) {
        fail(ErrorKind::format, "unsupported dataset version " + std::to_string(version));
    }
    Dataset ds;
    DatasetSpec& s = ds.spec;
    s.n_classes = r.get<std::uint32_t>("spec block");
    s.n_train = r.get<std::uint32_t>("spec block");
    s.n_val = r.get<std::uint32_t>("spec block");
    s.n_test = r.get<std::uint32_t>("spec block");
    s.n_patches = r.get<std::uint32_t>("spec block");
    s.patch_dim = r.get<std::uint32_t>("spec block");
    s.signal_fraction = r.get<double>("spec block");
    s.noise_std = r.get<double>("spec block");
    s.class_separation = r.get<double>("spec block");
    s.seed = r.get<std::uint64_t>("spec block");
    try {
        s.validate();
    } catch (const Error& e) {
        fail(ErrorKind::format, std::string("corrupt spec block: ") + e.what());
    }
    ds.train = decode_split(r, s, s.n_train, "train");
    ds.val = decode_split(r, s, s.n_val, "val");
    ds.test = decode_split(r, s, s.n_test, "test");
    if (!r.at_end()) fail(ErrorKind::format, "trailing bytes after the test split");
    return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::missing_file, "cannot write dataset to " + path.string());
    const std::string bytes = encode_dataset(dataset);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::missing_file, "dataset file not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_dataset(buf.str());
}

void check_compatible(const Dataset& ds, const ModelConfig& c) {
    if (ds.spec.n_patches != c.n_patches || ds.spec.patch_dim != c.patch_dim ||
        ds.spec.n_classes != c.n_classes) {
        fail(ErrorKind::dim_mismatch,
             "dataset (classes " + std::to_string(ds.spec.n_classes) + ", patches " +
                 std::to_string(ds.spec.n_patches) + ", patch_dim " + std::to_string(ds.spec.patch_dim) +
                 ") does not match model (classes " + std::to_string(c.n_classes) + ", patches " +
                 std::to_string(c.n_patches) + ", patch_dim " + std::to_string(c.patch_dim) + ")");
    }
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 std::uint64_t seed, std::size_t epoch) {
    if (batch_size == 0) fail(ErrorKind::config, "batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng(seed).stream("epoch." + std::to_string(epoch));
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace nearl
