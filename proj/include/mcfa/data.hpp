#pragma once

// Annotation ingestion and batch serving: axis-aligned boxes with IoU,
// manifest parsing, PGM/PPM image IO, bilinear resize, IoU-gated non-face
// crop generation and deterministic batch shuffling.

#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcfa/tensor.hpp"

namespace mcfa {

// Axis-aligned box in image-pixel units: (left, top, height, width).
struct Box {
    double left = 0.0;
    double top = 0.0;
    double height = 0.0;
    double width = 0.0;

    double area() const { return height > 0.0 && width > 0.0 ? height * width : 0.0; }
    double right() const { return left + width; }
    double bottom() const { return top + height; }
};

// area(a ∩ b) / area(a ∪ b); boxes of zero area yield 0.
inline double compute_iou(const Box& a, const Box& b) {
    const double aa = a.area(), ab = b.area();
    if (aa <= 0.0 || ab <= 0.0) return 0.0;
    const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left, b.left));
    const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top, b.top));
    const double inter = ix * iy;
    return inter / (aa + ab - inter);
}

enum class SampleKind { nonface, face, landmark, attribute };

inline const char* kind_name(SampleKind k) {
    switch (k) {
        case SampleKind::nonface: return "nonface";
        case SampleKind::face: return "face";
        case SampleKind::landmark: return "landmark";
        case SampleKind::attribute: return "attribute";
    }
    return "?";
}

inline SampleKind kind_from_name(const std::string& s) {
    if (s == "nonface") return SampleKind::nonface;
    if (s == "face") return SampleKind::face;
    if (s == "landmark") return SampleKind::landmark;
    if (s == "attribute") return SampleKind::attribute;
    throw std::runtime_error("unknown sample kind '" + s + "'");
}

// One training/eval record. Image values lie in [0,1]; box and landmark
// targets are normalized by the source image extent (x by width, y by
// height) so they are invariant under the resize to the network input.
struct Sample {
    Tensor image;  // [C,H,W]
    SampleKind kind = SampleKind::nonface;
    std::optional<std::array<double, 4>> box;        // (left, top, height, width), normalized
    std::optional<std::vector<double>> landmarks;    // (x1,y1,...,xk,yk), normalized
    std::optional<std::vector<int>> attributes;      // d entries in {0,1}

    bool is_face() const { return kind != SampleKind::nonface; }

    void validate(int d, int k) const {
        if (kind == SampleKind::nonface) {
            if (box || landmarks || attributes)
                throw std::invalid_argument("nonface sample carries annotations");
            return;
        }
        if (!box) throw std::invalid_argument("face-bearing sample lacks a box");
        if (kind == SampleKind::landmark) {
            if (!landmarks || static_cast<int>(landmarks->size()) != 2 * k)
                throw std::invalid_argument("landmark sample must carry exactly 2k coordinates");
        }
        if (kind == SampleKind::attribute) {
            if (!attributes || static_cast<int>(attributes->size()) != d)
                throw std::invalid_argument("attribute sample must carry exactly d labels");
        }
    }
};

struct ManifestRecord {
    std::string image_path;  // relative to the manifest's directory unless absolute
    SampleKind kind = SampleKind::nonface;
    Box box;                          // pixel units; face-bearing kinds only
    std::vector<double> landmarks_px; // pixel units; kind == landmark only
    std::vector<int> attributes;      // {0,1}; kind == attribute only
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;
    int num_attributes = 0;
    int num_landmarks = 0;
};

namespace detail {

inline double parse_double(const std::string& tok, const std::string& where) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": expected a number, got '" + tok + "'");
    }
    if (pos != tok.size())
        throw std::runtime_error(where + ": expected a number, got '" + tok + "'");
    return v;
}

}  // namespace detail

// Line-oriented manifest: `<image-path> <kind> <payload...>`, '#' starts a
// comment. Payloads: nonface none; face `l t h w`; landmark `l t h w
// x1 y1 .. xk yk`; attribute `l t h w a1 .. ad` with a_i in {-1,1}.
inline DatasetManifest load_manifest(const std::filesystem::path& path, int num_attributes,
                                     int num_landmarks) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    m.num_attributes = num_attributes;
    m.num_landmarks = num_landmarks;

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        std::string t;
        while (ls >> t) tok.push_back(t);
        if (tok.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (tok.size() < 2) throw std::runtime_error(where + ": missing sample kind");

        ManifestRecord rec;
        rec.image_path = tok[0];
        try {
            rec.kind = kind_from_name(tok[1]);
        } catch (const std::exception& e) {
            throw std::runtime_error(where + ": " + e.what());
        }
        const std::string record_name = where + " (" + rec.image_path + ")";
        const std::size_t payload = tok.size() - 2;

        switch (rec.kind) {
            case SampleKind::nonface:
                if (payload != 0)
                    throw std::runtime_error(record_name + ": nonface record takes no payload, got " +
                                             std::to_string(payload) + " fields");
                break;
            case SampleKind::face:
            case SampleKind::landmark:
            case SampleKind::attribute: {
                const std::size_t want =
                    rec.kind == SampleKind::face
                        ? 4
                        : rec.kind == SampleKind::landmark
                              ? 4 + 2 * static_cast<std::size_t>(num_landmarks)
                              : 4 + static_cast<std::size_t>(num_attributes);
                if (payload != want)
                    throw std::runtime_error(record_name + ": " + kind_name(rec.kind) +
                                             " record expects " + std::to_string(want) +
                                             " payload fields, got " + std::to_string(payload));
                rec.box.left = detail::parse_double(tok[2], where);
                rec.box.top = detail::parse_double(tok[3], where);
                rec.box.height = detail::parse_double(tok[4], where);
                rec.box.width = detail::parse_double(tok[5], where);
                if (rec.box.height <= 0.0 || rec.box.width <= 0.0)
                    throw std::runtime_error(record_name + ": ground-truth face box must have positive extent");
                if (rec.kind == SampleKind::landmark)
                    for (std::size_t i = 6; i < tok.size(); ++i)
                        rec.landmarks_px.push_back(detail::parse_double(tok[i], where));
                if (rec.kind == SampleKind::attribute)
                    for (std::size_t i = 6; i < tok.size(); ++i) {
                        if (tok[i] == "1")
                            rec.attributes.push_back(1);
                        else if (tok[i] == "-1")
                            rec.attributes.push_back(0);
                        else
                            throw std::runtime_error(record_name + ": attribute labels must be 1 or -1, got '" +
                                                     tok[i] + "'");
                    }
                break;
            }
        }
        m.records.push_back(std::move(rec));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out.precision(10);
    for (const auto& r : m.records) {
        out << r.image_path << ' ' << kind_name(r.kind);
        if (r.kind != SampleKind::nonface)
            out << ' ' << r.box.left << ' ' << r.box.top << ' ' << r.box.height << ' ' << r.box.width;
        if (r.kind == SampleKind::landmark)
            for (double v : r.landmarks_px) out << ' ' << v;
        if (r.kind == SampleKind::attribute)
            for (int a : r.attributes) out << ' ' << (a ? 1 : -1);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Image IO: PGM (P2/P5) and PPM (P3/P6), values scaled to [0,1].

namespace detail {

inline int pnm_next_int(std::istream& in, const std::string& file) {
    // skips whitespace and '#' comments
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string junk;
            std::getline(in, junk);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error("malformed PNM header in " + file);
    return v;
}

}  // namespace detail

inline Tensor read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image " + path.string());
    std::string magic;
    in >> magic;
    const bool ascii = magic == "P2" || magic == "P3";
    const bool binary = magic == "P5" || magic == "P6";
    if (!ascii && !binary)
        throw std::runtime_error("unsupported image format '" + magic + "' in " + path.string() +
                                 " (PGM/PPM expected)");
    const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
    const int w = detail::pnm_next_int(in, path.string());
    const int h = detail::pnm_next_int(in, path.string());
    const int maxval = detail::pnm_next_int(in, path.string());
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
        throw std::runtime_error("bad PNM dimensions in " + path.string());

    Tensor img({channels, h, w});
    const std::size_t n = static_cast<std::size_t>(channels) * h * w;
    const double scale = 1.0 / maxval;
    if (ascii) {
        for (std::size_t i = 0; i < n; ++i) {
            int v;
            if (!(in >> v)) throw std::runtime_error("truncated PNM data in " + path.string());
            // interleaved -> planar
            const std::size_t pix = i / channels, ch = i % channels;
            img.data()[ch * static_cast<std::size_t>(h) * w + pix] = v * scale;
        }
    } else {
        in.get();  // single whitespace after maxval
        const int bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(n * bytes);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(in.gcount()) != buf.size())
            throw std::runtime_error("truncated PNM data in " + path.string());
        for (std::size_t i = 0; i < n; ++i) {
            const int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8) | buf[2 * i + 1];
            const std::size_t pix = i / channels, ch = i % channels;
            img.data()[ch * static_cast<std::size_t>(h) * w + pix] = v * scale;
        }
    }
    return img;
}

inline void write_pnm(const Tensor& img, const std::filesystem::path& path) {
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
        throw std::invalid_argument("write_pnm: image must be [1|3,H,W]");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image " + path.string());
    out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(c) * h * w);
    for (std::size_t pix = 0; pix < static_cast<std::size_t>(h) * w; ++pix)
        for (int ch = 0; ch < c; ++ch) {
            double v = img.data()[ch * static_cast<std::size_t>(h) * w + pix];
            v = std::min(1.0, std::max(0.0, v));
            buf[pix * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

// Bilinear resample with half-pixel alignment.
inline Tensor bilinear_resize(const Tensor& img, int out_h, int out_w) {
    if (img.rank() != 3) throw std::invalid_argument("bilinear_resize: image must be [C,H,W]");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (out_h == h && out_w == w) return img.clone();
    Tensor out({c, out_h, out_w});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double* p = img.data() + static_cast<std::size_t>(ch) * h * w;
                const double v = (1 - wy) * ((1 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1]) +
                                 wy * ((1 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1]);
                out.data()[(static_cast<std::size_t>(ch) * out_h + oy) * out_w + ox] = v;
            }
        }
    }
    return out;
}

// Bilinear resample of a pixel-space sub-rectangle to out_side x out_side.
inline Tensor crop_resize(const Tensor& img, const Box& region, int out_side) {
    if (img.rank() != 3) throw std::invalid_argument("crop_resize: image must be [C,H,W]");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor out({c, out_side, out_side});
    for (int oy = 0; oy < out_side; ++oy) {
        double fy = region.top + (oy + 0.5) * region.height / out_side - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < out_side; ++ox) {
            double fx = region.left + (ox + 0.5) * region.width / out_side - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double* p = img.data() + static_cast<std::size_t>(ch) * h * w;
                out.data()[(static_cast<std::size_t>(ch) * out_side + oy) * out_side + ox] =
                    (1 - wy) * ((1 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1]) +
                    wy * ((1 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1]);
            }
        }
    }
    return out;
}

inline Tensor adapt_channels(const Tensor& img, int want) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (c == want) return img;
    Tensor out({want, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (c == 1) {
        for (int ch = 0; ch < want; ++ch)
            std::copy(img.data(), img.data() + plane, out.data() + ch * plane);
    } else if (want == 1) {
        for (std::size_t i = 0; i < plane; ++i) {
            double acc = 0.0;
            for (int ch = 0; ch < c; ++ch) acc += img.data()[ch * plane + i];
            out.data()[i] = acc / c;
        }
    } else {
        throw std::invalid_argument("adapt_channels: unsupported conversion " + std::to_string(c) +
                                    " -> " + std::to_string(want));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Non-face crop generation (rejection sampling against the IoU gate).

// Square crop boxes with side uniform in [lo,hi] of the shorter image side,
// each with IoU < iou_limit against the ground-truth face.
inline std::vector<Box> sample_nonface_boxes(int img_w, int img_h, const Box& gt_face, int count,
                                             std::uint64_t rng_seed, double lo = 0.3,
                                             double hi = 0.8, double iou_limit = 0.001) {
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> frac(lo, hi);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double base = std::min(img_w, img_h);
    std::vector<Box> boxes;
    const long max_attempts = std::max(4000L, 4000L * count);
    long attempts = 0;
    while (static_cast<int>(boxes.size()) < count) {
        if (++attempts > max_attempts)
            throw std::runtime_error(
                "generate_nonface_crops: exhausted " + std::to_string(max_attempts) +
                " attempts; the image is too small or the face too large to admit IoU < " +
                std::to_string(iou_limit) + " crops");
        const double side = frac(rng) * base;
        if (side < 1.0 || side > img_w || side > img_h) continue;
        Box crop;
        crop.width = side;
        crop.height = side;
        crop.left = unit(rng) * (img_w - side);
        crop.top = unit(rng) * (img_h - side);
        if (compute_iou(crop, gt_face) < iou_limit) boxes.push_back(crop);
    }
    return boxes;
}

inline std::vector<Sample> generate_nonface_crops(const Tensor& image, const Box& gt_face,
                                                  int count, std::uint64_t rng_seed,
                                                  int out_side) {
    if (image.rank() != 3) throw std::invalid_argument("generate_nonface_crops: image must be [C,H,W]");
    const int h = image.dim(1), w = image.dim(2);
    if (w < 4 || h < 4) throw std::runtime_error("generate_nonface_crops: image too small to crop");
    auto boxes = sample_nonface_boxes(w, h, gt_face, count, rng_seed);
    std::vector<Sample> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) {
        Sample s;
        s.kind = SampleKind::nonface;
        s.image = crop_resize(image, b, out_side);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Record -> Sample materialization and batching.

inline Sample load_sample(const DatasetManifest& m, const ManifestRecord& rec, int input_side,
                          int channels) {
    std::filesystem::path p(rec.image_path);
    if (p.is_relative()) p = m.base_dir / p;
    Tensor raw = read_pnm(p);
    const int src_h = raw.dim(1), src_w = raw.dim(2);
    Sample s;
    s.kind = rec.kind;
    s.image = bilinear_resize(adapt_channels(raw, channels), input_side, input_side);
    if (rec.kind != SampleKind::nonface) {
        s.box = std::array<double, 4>{rec.box.left / src_w, rec.box.top / src_h,
                                      rec.box.height / src_h, rec.box.width / src_w};
    }
    if (rec.kind == SampleKind::landmark) {
        std::vector<double> lm(rec.landmarks_px.size());
        for (std::size_t i = 0; i < lm.size(); ++i)
            lm[i] = rec.landmarks_px[i] / (i % 2 == 0 ? src_w : src_h);
        s.landmarks = std::move(lm);
    }
    if (rec.kind == SampleKind::attribute) s.attributes = rec.attributes;
    s.validate(m.num_attributes, m.num_landmarks);
    return s;
}

inline std::vector<Sample> load_samples(const DatasetManifest& m, int input_side, int channels) {
    std::vector<Sample> out;
    out.reserve(m.records.size());
    for (const auto& r : m.records) out.push_back(load_sample(m, r, input_side, channels));
    return out;
}

// One epoch of batches: deterministic shuffle by seed, final partial batch
// retained. Sample copies are cheap (tensors share storage).
inline std::vector<std::vector<Sample>> make_batches(const std::vector<Sample>& dataset,
                                                     int batch_size, std::uint64_t rng_seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(rng_seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Sample>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::vector<Sample> b;
        const std::size_t end = std::min(order.size(), start + batch_size);
        b.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) b.push_back(dataset[order[i]]);
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace mcfa
