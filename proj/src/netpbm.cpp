#include "sqa/netpbm.hpp"

#include <cmath>
#include <fstream>

#include "sqa/error.hpp"

namespace sqa {

namespace {

struct PnmReader {
    std::string buf;
    std::size_t pos = 0;
    std::string path;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(path + ": " + what + " at byte offset " + std::to_string(pos));
    }
    void skip_space() {
        while (pos < buf.size()) {
            const char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }
    std::int64_t read_uint() {
        skip_space();
        if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') fail("expected an integer");
        std::int64_t v = 0;
        while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
            v = v * 10 + (buf[pos] - '0');
            if (v > 1000000) fail("integer out of range");
            ++pos;
        }
        return v;
    }
};

PnmReader open_pnm(const std::string& path, const char* magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "' for reading");
    PnmReader r;
    r.path = path;
    r.buf.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (r.buf.size() < 2 || r.buf.compare(0, 2, magic) != 0)
        r.fail(std::string("expected magic \"") + magic + "\"");
    r.pos = 2;
    return r;
}

void read_dims_and_payload(PnmReader& r, std::int64_t channels, std::int64_t& width,
                           std::int64_t& height, std::vector<std::uint8_t>& pixels) {
    width = r.read_uint();
    height = r.read_uint();
    if (width < 1 || height < 1) r.fail("non-positive raster extents");
    const std::int64_t maxval = r.read_uint();
    if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
    if (r.pos >= r.buf.size()) r.fail("missing whitespace before payload");
    const char sep = r.buf[r.pos];
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
        r.fail("expected single whitespace before payload");
    ++r.pos;
    const std::size_t need = std::size_t(width * height * channels);
    if (r.buf.size() - r.pos < need) r.fail("truncated payload");
    if (r.buf.size() - r.pos > need) {
        r.pos += need;
        r.fail("trailing bytes after payload");
    }
    pixels.assign(r.buf.begin() + std::ptrdiff_t(r.pos), r.buf.end());
}

}  // namespace

PgmImage read_pgm(const std::string& path) {
    auto r = open_pnm(path, "P5");
    PgmImage img;
    read_dims_and_payload(r, 1, img.width, img.height, img.pixels);
    return img;
}

void write_pgm(const std::string& path, const PgmImage& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              std::streamsize(img.pixels.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

PpmImage read_ppm(const std::string& path) {
    auto r = open_pnm(path, "P6");
    PpmImage img;
    read_dims_and_payload(r, 3, img.width, img.height, img.pixels);
    return img;
}

void write_ppm(const std::string& path, const PpmImage& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              std::streamsize(img.pixels.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

PgmImage mask_to_pgm(const TensorPtr<float>& mask) {
    const std::size_t rank = mask->rank();
    if (rank != 2 && !(rank == 3 && mask->dim(0) == 1))
        throw ShapeError("mask tensor must be [H,W] or [1,H,W]");
    PgmImage img;
    img.height = mask->dim(rank - 2);
    img.width = mask->dim(rank - 1);
    img.pixels.resize(mask->data.size());
    for (std::size_t i = 0; i < mask->data.size(); ++i) {
        const float v = mask->data[i];
        if (v != 0.0f && v != 1.0f) throw UsageError("mask values must be exactly 0 or 1");
        img.pixels[i] = v == 1.0f ? 255 : 0;
    }
    return img;
}

TensorPtr<float> pgm_to_mask(const PgmImage& img) {
    auto t = make_tensor<float>({1, img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (img.pixels[i] != 0 && img.pixels[i] != 255)
            throw FormatError("mask raster must contain only 0 or 255, got " +
                              std::to_string(int(img.pixels[i])));
        t->data[i] = img.pixels[i] == 255 ? 1.0f : 0.0f;
    }
    return t;
}

PgmImage labels_to_pgm(const TensorPtr<float>& labels) {
    if (labels->rank() != 2) throw ShapeError("label tensor must be [H,W]");
    PgmImage img;
    img.height = labels->dim(0);
    img.width = labels->dim(1);
    img.pixels.resize(labels->data.size());
    for (std::size_t i = 0; i < labels->data.size(); ++i) {
        const float v = labels->data[i];
        if (v != 0.0f && v != 1.0f && v != 2.0f)
            throw UsageError("label values must be 0, 1, or 2");
        img.pixels[i] = std::uint8_t(v);
    }
    return img;
}

TensorPtr<float> pgm_to_labels(const PgmImage& img) {
    auto t = make_tensor<float>({img.height, img.width});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        if (img.pixels[i] > 2)
            throw FormatError("label raster must contain only {0,1,2}, got " +
                              std::to_string(int(img.pixels[i])));
        t->data[i] = float(img.pixels[i]);
    }
    return t;
}

PpmImage image_to_ppm(const TensorPtr<float>& image) {
    if (image->rank() != 3 || image->dim(0) != 3)
        throw ShapeError("image tensor must be [3,H,W]");
    PpmImage img;
    img.height = image->dim(1);
    img.width = image->dim(2);
    const std::int64_t hw = img.height * img.width;
    img.pixels.resize(std::size_t(hw * 3));
    for (std::int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            const float v = std::min(std::max(image->data[std::size_t(c * hw + p)], 0.0f), 1.0f);
            img.pixels[std::size_t(p * 3 + c)] = std::uint8_t(std::lround(v * 255.0f));
        }
    return img;
}

TensorPtr<float> ppm_to_image(const PpmImage& img) {
    auto t = make_tensor<float>({3, img.height, img.width});
    const std::int64_t hw = img.height * img.width;
    for (std::int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c)
            t->data[std::size_t(c * hw + p)] =
                float(img.pixels[std::size_t(p * 3 + c)]) / 255.0f;
    return t;
}

PpmImage render_overlay(const std::vector<std::uint8_t>& labels, std::int64_t height,
                        std::int64_t width, const TensorPtr<float>& image) {
    if (std::int64_t(labels.size()) != height * width)
        throw ShapeError("overlay: label count does not match extents");
    if (image && (image->rank() != 3 || image->dim(0) != 3 || image->dim(1) != height ||
                  image->dim(2) != width))
        throw ShapeError("overlay: image extents do not match labels");
    PpmImage out;
    out.height = height;
    out.width = width;
    out.pixels.resize(std::size_t(height * width * 3));
    const std::int64_t hw = height * width;
    for (std::int64_t p = 0; p < hw; ++p) {
        std::uint8_t r, g, b;
        switch (labels[std::size_t(p)]) {
            case 1:  // missed: green
                r = 0, g = 255, b = 0;
                break;
            case 2:  // mistaken: red
                r = 255, g = 0, b = 0;
                break;
            default: {
                float gray = 0.5f;
                if (image)
                    gray = (image->data[std::size_t(p)] + image->data[std::size_t(hw + p)] +
                            image->data[std::size_t(2 * hw + p)]) /
                           3.0f;
                const auto gb = std::uint8_t(std::lround(std::min(std::max(gray, 0.0f), 1.0f) * 255.0f));
                r = g = b = gb;
                break;
            }
        }
        out.pixels[std::size_t(p * 3)] = r;
        out.pixels[std::size_t(p * 3 + 1)] = g;
        out.pixels[std::size_t(p * 3 + 2)] = b;
    }
    return out;
}

}  // namespace sqa
