#include "embedlab/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "embedlab/error.hpp"

namespace embedlab {

namespace {

std::string read_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::fseek(f, 0, SEEK_END);
    const long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::string bytes(static_cast<std::size_t>(size), '\0');
    const std::size_t got = size > 0 ? std::fread(bytes.data(), 1, bytes.size(), f) : 0;
    std::fclose(f);
    if (got != bytes.size()) throw IoError("short read on '" + path + "'");
    return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    const std::size_t put = std::fwrite(bytes.data(), 1, bytes.size(), f);
    std::fclose(f);
    if (put != bytes.size()) throw IoError("short write on '" + path + "'");
}

bool has_gzip_magic(const std::string& bytes) {
    return bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
           static_cast<unsigned char>(bytes[1]) == 0x8b;
}

std::string gunzip_bytes(const std::string& bytes, const std::string& origin) {
    z_stream strm{};
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK) {
        throw FormatError("gzip decompressor initialization failed for '" + origin + "'");
    }
    std::string out;
    out.reserve(bytes.size() * 4);
    char buf[1 << 15];
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
    strm.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    do {
        strm.next_out = reinterpret_cast<Bytef*>(buf);
        strm.avail_out = sizeof buf;
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw FormatError("gzip stream in '" + origin + "' is corrupt (zlib code " +
                              std::to_string(rc) + ")");
        }
        out.append(buf, sizeof buf - strm.avail_out);
    } while (rc != Z_STREAM_END);
    inflateEnd(&strm);
    return out;
}

std::string gzip_bytes(const std::string& bytes) {
    z_stream strm{};
    if (deflateInit2(&strm, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8,
                     Z_DEFAULT_STRATEGY) != Z_OK) {
        throw IoError("gzip compressor initialization failed");
    }
    std::string out;
    char buf[1 << 15];
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
    strm.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    do {
        strm.next_out = reinterpret_cast<Bytef*>(buf);
        strm.avail_out = sizeof buf;
        rc = deflate(&strm, Z_FINISH);
        out.append(buf, sizeof buf - strm.avail_out);
    } while (rc == Z_OK);
    deflateEnd(&strm);
    if (rc != Z_STREAM_END) throw IoError("gzip compression failed");
    return out;
}

std::string read_maybe_gzipped(const std::string& path) {
    std::string bytes = read_file(path);
    if (has_gzip_magic(bytes)) return gunzip_bytes(bytes, path);
    return bytes;
}

std::uint32_t read_u32_be(const std::string& bytes, std::size_t offset) {
    const auto b = [&](std::size_t i) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i]));
    };
    return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

void append_u32_be(std::string& bytes, std::uint32_t v) {
    bytes.push_back(static_cast<char>((v >> 24) & 0xff));
    bytes.push_back(static_cast<char>((v >> 16) & 0xff));
    bytes.push_back(static_cast<char>((v >> 8) & 0xff));
    bytes.push_back(static_cast<char>(v & 0xff));
}

std::string hex_u32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::uint8_t quantize_pixel(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

}  // namespace

void Dataset::validate() const {
    if (images.rank() != 4) {
        throw DimensionError("dataset images must be rank-4 NCHW, got " + images.shape_str());
    }
    if (images.extent(0) != labels.size()) {
        throw DimensionError("dataset has " + std::to_string(images.extent(0)) +
                             " images but " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= class_names.size()) {
            throw ValueError("label " + std::to_string(labels[i]) + " at sample " +
                             std::to_string(i) + " out of range [0, " +
                             std::to_string(class_names.size()) + ")");
        }
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!(images[i] >= 0.0 && images[i] <= 1.0)) {
            throw ValueError("pixel value " + std::to_string(images[i]) +
                             " outside [0,1] at flat index " + std::to_string(i));
        }
    }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    if (indices.empty()) throw ValueError("dataset subset needs at least one index");
    const std::size_t stride = images.size() / images.extent(0);
    Dataset out;
    out.class_names = class_names;
    out.name = name;
    out.labels.reserve(indices.size());
    std::vector<std::size_t> shape = images.shape();
    shape[0] = indices.size();
    out.images = Tensor(std::move(shape));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t src = indices[i];
        if (src >= labels.size()) {
            throw ValueError("subset index " + std::to_string(src) + " out of range");
        }
        out.labels.push_back(labels[src]);
        const double* from = images.data() + src * stride;
        double* to = out.images.data() + i * stride;
        std::copy(from, from + stride, to);
    }
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const std::string img = read_maybe_gzipped(images_path);
    if (img.size() < 16) {
        throw FormatError("'" + images_path + "' too short for an IDX image header");
    }
    const std::uint32_t img_magic = read_u32_be(img, 0);
    if (img_magic != kIdxImageMagic) {
        throw FormatError("'" + images_path + "' has image magic " + hex_u32(img_magic) +
                          " (expected " + hex_u32(kIdxImageMagic) + ")");
    }
    const std::size_t count = read_u32_be(img, 4);
    const std::size_t rows = read_u32_be(img, 8);
    const std::size_t cols = read_u32_be(img, 12);
    if (count == 0 || rows == 0 || cols == 0) {
        throw FormatError("'" + images_path + "' declares an empty image set");
    }
    if (img.size() != 16 + count * rows * cols) {
        throw FormatError("'" + images_path + "' holds " + std::to_string(img.size() - 16) +
                          " pixel bytes, expected " + std::to_string(count * rows * cols));
    }

    const std::string lab = read_maybe_gzipped(labels_path);
    if (lab.size() < 8) {
        throw FormatError("'" + labels_path + "' too short for an IDX label header");
    }
    const std::uint32_t lab_magic = read_u32_be(lab, 0);
    if (lab_magic != kIdxLabelMagic) {
        throw FormatError("'" + labels_path + "' has label magic " + hex_u32(lab_magic) +
                          " (expected " + hex_u32(kIdxLabelMagic) + ")");
    }
    const std::size_t lab_count = read_u32_be(lab, 4);
    if (lab.size() != 8 + lab_count) {
        throw FormatError("'" + labels_path + "' holds " + std::to_string(lab.size() - 8) +
                          " label bytes, expected " + std::to_string(lab_count));
    }
    if (lab_count != count) {
        throw FormatError("image file '" + images_path + "' has " + std::to_string(count) +
                          " samples but label file '" + labels_path + "' has " +
                          std::to_string(lab_count));
    }

    Dataset ds;
    ds.images = Tensor({count, 1, rows, cols});
    for (std::size_t i = 0; i < count * rows * cols; ++i) {
        ds.images[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
    }
    ds.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels.push_back(static_cast<unsigned char>(lab[8 + i]));
    }
    ds.class_names = dataset_class_names("mnist");
    ds.name = "mnist";
    ds.validate();
    return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path,
               const std::string& labels_path, bool gzip) {
    ds.validate();
    if (ds.images.extent(1) != 1) {
        throw DimensionError("IDX stores single-channel images, got " +
                             ds.images.shape_str());
    }
    const std::size_t n = ds.size(), rows = ds.images.extent(2), cols = ds.images.extent(3);

    std::string img;
    img.reserve(16 + n * rows * cols);
    append_u32_be(img, kIdxImageMagic);
    append_u32_be(img, static_cast<std::uint32_t>(n));
    append_u32_be(img, static_cast<std::uint32_t>(rows));
    append_u32_be(img, static_cast<std::uint32_t>(cols));
    for (std::size_t i = 0; i < n * rows * cols; ++i) {
        img.push_back(static_cast<char>(quantize_pixel(ds.images[i])));
    }

    std::string lab;
    lab.reserve(8 + n);
    append_u32_be(lab, kIdxLabelMagic);
    append_u32_be(lab, static_cast<std::uint32_t>(n));
    for (const std::size_t y : ds.labels) lab.push_back(static_cast<char>(y));

    write_file(images_path, gzip ? gzip_bytes(img) : img);
    write_file(labels_path, gzip ? gzip_bytes(lab) : lab);
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
    if (batch_paths.empty()) throw ValueError("load_cifar10 needs at least one batch file");

    std::vector<std::string> payloads;
    std::size_t total = 0;
    for (const auto& path : batch_paths) {
        std::string bytes = read_maybe_gzipped(path);
        if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
            throw FormatError("'" + path + "' size " + std::to_string(bytes.size()) +
                              " is not a positive multiple of " +
                              std::to_string(kCifarRecord));
        }
        total += bytes.size() / kCifarRecord;
        payloads.push_back(std::move(bytes));
    }

    Dataset ds;
    ds.images = Tensor({total, 3, 32, 32});
    ds.labels.reserve(total);
    std::size_t sample = 0;
    const std::size_t plane = 3 * 32 * 32;
    for (std::size_t p = 0; p < payloads.size(); ++p) {
        const std::string& bytes = payloads[p];
        for (std::size_t r = 0; r < bytes.size() / kCifarRecord; ++r, ++sample) {
            const std::size_t base = r * kCifarRecord;
            const unsigned char label = static_cast<unsigned char>(bytes[base]);
            if (label > 9) {
                throw ValueError("record " + std::to_string(r) + " of '" + batch_paths[p] +
                                 "' has label " + std::to_string(label) + " > 9");
            }
            ds.labels.push_back(label);
            double* dst = ds.images.data() + sample * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                dst[i] = static_cast<unsigned char>(bytes[base + 1 + i]) / 255.0;
            }
        }
    }
    ds.class_names = dataset_class_names("cifar10");
    ds.name = "cifar10";
    ds.validate();
    return ds;
}

void write_cifar10(const Dataset& ds, const std::string& path) {
    ds.validate();
    if (ds.images.extent(1) != 3 || ds.images.extent(2) != 32 || ds.images.extent(3) != 32) {
        throw DimensionError("CIFAR-10 records are 3x32x32, got " + ds.images.shape_str());
    }
    std::string bytes;
    bytes.reserve(ds.size() * kCifarRecord);
    const std::size_t plane = 3 * 32 * 32;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        bytes.push_back(static_cast<char>(ds.labels[i]));
        const double* src = ds.images.data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) {
            bytes.push_back(static_cast<char>(quantize_pixel(src[j])));
        }
    }
    write_file(path, bytes);
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, Rng& rng) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValueError("train fraction must be in (0,1), got " +
                         std::to_string(train_fraction));
    }
    const std::size_t n = ds.size();
    if (n < 2) throw ValueError("cannot split a dataset of fewer than 2 samples");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::size_t n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::min(std::max<std::size_t>(n_train, 1), n - 1);

    const std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
    const std::vector<std::size_t> test_idx(order.begin() + n_train, order.end());
    return {ds.subset(train_idx), ds.subset(test_idx)};
}

std::vector<Batch> batches(const Dataset& ds, const BatchPlan& plan, std::uint64_t epoch) {
    if (plan.batch_size < 2) {
        throw ConfigError("batch size must be at least 2, got " +
                          std::to_string(plan.batch_size));
    }
    const std::size_t n = ds.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(plan.seed, epoch));
    rng.shuffle(order);

    const std::size_t stride = ds.images.size() / n;
    std::vector<Batch> out;
    for (std::size_t start = 0; start < n; start += plan.batch_size) {
        const std::size_t end = std::min(start + plan.batch_size, n);
        if (plan.drop_last && end - start < plan.batch_size) break;
        Batch batch;
        std::vector<std::size_t> shape = ds.images.shape();
        shape[0] = end - start;
        batch.images = Tensor(std::move(shape));
        batch.labels.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
            const std::size_t src = order[i];
            batch.labels.push_back(ds.labels[src]);
            const double* from = ds.images.data() + src * stride;
            std::copy(from, from + stride, batch.images.data() + (i - start) * stride);
        }
        out.push_back(std::move(batch));
    }
    return out;
}

namespace {

// 5x7 dot-matrix glyphs for the synthetic digit fixture, one string per row.
const char* const kDigitGlyphs[10][7] = {
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
    {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."},
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
    {".###.", "#....", "####.", "#...#", "#...#", "#...#", ".###."},
    {"#####", "....#", "...#.", "..#..", "..#..", "..#..", "..#.."},
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
    {".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."},
};

}  // namespace

Dataset synthetic_digits(std::size_t count, Rng& rng) {
    if (count == 0) throw ValueError("synthetic_digits needs a positive count");
    const std::size_t upscale = 3;        // 5x7 glyph -> 15x21
    const std::size_t gw = 5 * upscale, gh = 7 * upscale;
    const std::size_t side = 28;

    Dataset ds;
    ds.images = Tensor::zeros({count, 1, side, side});
    ds.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t digit = i % 10;
        ds.labels.push_back(digit);

        // Glyph placement jitter of +/-3 pixels around the centered position.
        const std::size_t x0 = (side - gw) / 2 - 3 + rng.uniform_int(7);
        const std::size_t y0 = (side - gh) / 2 - 3 + rng.uniform_int(7);
        const double intensity = rng.uniform(0.75, 1.0);

        double* img = ds.images.data() + i * side * side;
        for (std::size_t gy = 0; gy < gh; ++gy) {
            const char* row = kDigitGlyphs[digit][gy / upscale];
            for (std::size_t gx = 0; gx < gw; ++gx) {
                if (row[gx / upscale] == '#') {
                    img[(y0 + gy) * side + (x0 + gx)] = intensity;
                }
            }
        }
        for (std::size_t p = 0; p < side * side; ++p) {
            const double noisy = img[p] + 0.06 * rng.normal();
            img[p] = std::min(1.0, std::max(0.0, noisy));
        }
    }
    ds.class_names = dataset_class_names("mnist");
    ds.name = "mnist";
    ds.validate();
    return ds;
}

Dataset synthetic_color_blobs(std::size_t count, Rng& rng) {
    if (count == 0) throw ValueError("synthetic_color_blobs needs a positive count");
    // One distinct base color per class.
    const double colors[10][3] = {
        {0.90, 0.10, 0.10}, {0.10, 0.90, 0.10}, {0.10, 0.10, 0.90}, {0.90, 0.90, 0.10},
        {0.90, 0.10, 0.90}, {0.10, 0.90, 0.90}, {0.95, 0.55, 0.10}, {0.55, 0.10, 0.95},
        {0.60, 0.80, 0.40}, {0.40, 0.40, 0.40},
    };
    const std::size_t side = 32;

    Dataset ds;
    ds.images = Tensor::zeros({count, 3, side, side});
    ds.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t cls = i % 10;
        ds.labels.push_back(cls);
        const double cx = 10.0 + rng.uniform() * 12.0;
        const double cy = 10.0 + rng.uniform() * 12.0;
        const double radius = 6.0 + rng.uniform() * 4.0;

        double* img = ds.images.data() + i * 3 * side * side;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double blob =
                        std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                    const double v = 0.12 + 0.75 * blob * colors[cls][c] +
                                     0.04 * rng.normal();
                    img[(c * side + y) * side + x] = std::min(1.0, std::max(0.0, v));
                }
            }
        }
    }
    ds.class_names = dataset_class_names("cifar10");
    ds.name = "cifar10";
    ds.validate();
    return ds;
}

std::vector<std::string> dataset_class_names(const std::string& name) {
    if (name == "mnist") {
        return {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"};
    }
    if (name == "fashion_mnist") {
        return {"T-shirt/top", "Trouser", "Pullover", "Dress", "Coat",
                "Sandal",      "Shirt",   "Sneaker",  "Bag",   "Ankle boot"};
    }
    if (name == "cifar10") {
        return {"airplane", "automobile", "bird", "cat",  "deer",
                "dog",      "frog",       "horse", "ship", "truck"};
    }
    throw ConfigError("unknown dataset '" + name + "'");
}

namespace {

std::string existing_variant(const std::string& base) {
    namespace fs = std::filesystem;
    if (fs::exists(base)) return base;
    if (fs::exists(base + ".gz")) return base + ".gz";
    throw IoError("dataset file '" + base + "' not found (nor '" + base + ".gz')");
}

}  // namespace

Dataset load_dataset(const std::string& name, const std::string& root, bool train_split) {
    const std::vector<std::string> names = dataset_class_names(name);  // validates name
    Dataset ds;
    if (name == "cifar10") {
        std::vector<std::string> paths;
        if (train_split) {
            for (int i = 1; i <= 5; ++i) {
                paths.push_back(
                    existing_variant(root + "/data_batch_" + std::to_string(i) + ".bin"));
            }
        } else {
            paths.push_back(existing_variant(root + "/test_batch.bin"));
        }
        ds = load_cifar10(paths);
    } else {
        const std::string prefix = train_split ? "train" : "t10k";
        const std::string images = existing_variant(root + "/" + prefix + "-images-idx3-ubyte");
        const std::string labels = existing_variant(root + "/" + prefix + "-labels-idx1-ubyte");
        ds = load_idx(images, labels);
    }
    ds.name = name;
    ds.class_names = names;
    ds.validate();
    return ds;
}

}  // namespace embedlab
