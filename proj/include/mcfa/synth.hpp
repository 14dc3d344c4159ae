#pragma once

// Synthetic face-blob dataset generator. Renders parametric "faces"
// (elliptical head, eye dots, mouth bar, optional extras) on textured
// backgrounds; every attribute label is determined by the rendering
// parameters, so ground truth is exact by construction. Emits images plus a
// manifest covering all four annotation kinds.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mcfa/data.hpp"

namespace mcfa {

struct SynthOptions {
    int count = 32;
    std::uint64_t seed = 1;
    int image_side = 64;
    int channels = 1;
    int num_attributes = 4;  // 1..8 supported
    // record-kind mixture; normalized internally
    double frac_attribute = 0.5;
    double frac_landmark = 1.0 / 6.0;
    double frac_face = 1.0 / 6.0;
    double frac_nonface = 1.0 / 6.0;
};

namespace detail {

// face geometry + appearance; attributes toggle individual knobs
struct SynthFace {
    double cx, cy, rx, ry;
    double face_level, bg_level, eye_r;
    bool mouth, brows, nose, ring;
    std::vector<int> attrs;
    std::vector<double> landmarks;  // 5 points, pixel units
    Box bbox;
};

inline void draw_ellipse(Tensor& img, double cx, double cy, double rx, double ry, double level) {
    const int h = img.dim(1), w = img.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = std::max(0, static_cast<int>(cy - ry - 2)); y < std::min(h, static_cast<int>(cy + ry + 3)); ++y)
        for (int x = std::max(0, static_cast<int>(cx - rx - 2)); x < std::min(w, static_cast<int>(cx + rx + 3)); ++x) {
            const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
            const double r = dx * dx + dy * dy;
            if (r > 1.0) continue;
            // soft edge over the outer 15% of the radius
            const double a = r < 0.85 ? 1.0 : (1.0 - r) / 0.15;
            for (int c = 0; c < img.dim(0); ++c) {
                double& px = img.data()[c * plane + static_cast<std::size_t>(y) * w + x];
                px = (1.0 - a) * px + a * level;
            }
        }
}

inline void draw_rect(Tensor& img, double cx, double cy, double hw, double hh, double level) {
    const int h = img.dim(1), w = img.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = std::max(0, static_cast<int>(cy - hh)); y < std::min(h, static_cast<int>(cy + hh + 1)); ++y)
        for (int x = std::max(0, static_cast<int>(cx - hw)); x < std::min(w, static_cast<int>(cx + hw + 1)); ++x)
            for (int c = 0; c < img.dim(0); ++c)
                img.data()[c * plane + static_cast<std::size_t>(y) * w + x] = level;
}

inline SynthFace make_face(std::mt19937_64& rng, int side, int num_attributes) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SynthFace f;
    f.attrs.resize(num_attributes);
    for (auto& a : f.attrs) a = rng() % 2 ? 1 : 0;
    auto attr = [&](int i, bool dflt) { return i < num_attributes ? f.attrs[i] == 1 : dflt; };

    const double s = side;
    // keep the face off-center on one axis so the background always admits
    // IoU-gated non-face crops with side >= 0.3 of the image
    const bool offset_x = rng() % 2 == 0;
    const bool low_side = rng() % 2 == 0;
    auto offset_coord = [&] { return (low_side ? 0.30 + 0.06 * unit(rng) : 0.64 + 0.06 * unit(rng)) * s; };
    auto free_coord = [&] { return (0.34 + 0.32 * unit(rng)) * s; };
    f.cx = offset_x ? offset_coord() : free_coord();
    f.cy = offset_x ? free_coord() : offset_coord();
    const double base_r = (0.16 + 0.03 * unit(rng)) * s;
    // attr 1: wide face (flat ellipse) vs tall face
    f.rx = attr(1, false) ? base_r * 1.30 : base_r * 0.70;
    f.ry = attr(1, false) ? base_r * 0.70 : base_r * 1.30;
    // attr 0: bright face on mid background
    f.face_level = attr(0, false) ? 0.95 : 0.40;
    // attr 4: dark background
    f.bg_level = attr(4, false) ? 0.12 : 0.62;
    // attr 3: big dark eyes
    f.eye_r = attr(3, false) ? 0.30 * base_r : 0.10 * base_r;
    // attr 2: mouth bar present
    f.mouth = attr(2, true);
    f.brows = attr(5, false);
    f.nose = attr(6, true);
    f.ring = attr(7, false);

    const double ex = 0.42 * f.rx, ey = 0.32 * f.ry;
    const double my = 0.48 * f.ry, mx = 0.40 * f.rx;
    f.landmarks = {f.cx - ex, f.cy - ey,   // left eye
                   f.cx + ex, f.cy - ey,   // right eye
                   f.cx,      f.cy + 0.08 * f.ry,  // nose tip
                   f.cx - mx, f.cy + my,   // left mouth corner
                   f.cx + mx, f.cy + my};  // right mouth corner
    f.bbox.left = std::max(0.0, f.cx - f.rx);
    f.bbox.top = std::max(0.0, f.cy - f.ry);
    f.bbox.width = std::min(static_cast<double>(side), f.cx + f.rx) - f.bbox.left;
    f.bbox.height = std::min(static_cast<double>(side), f.cy + f.ry) - f.bbox.top;
    return f;
}

inline Tensor render_face(const SynthFace& f, std::mt19937_64& rng, int side, int channels) {
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    Tensor img({channels, side, side});
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    // textured background: base level + horizontal ramp + pixel noise
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double v = f.bg_level + 0.10 * (static_cast<double>(x) / side - 0.5) + noise(rng);
            for (int c = 0; c < channels; ++c)
                img.data()[c * plane + static_cast<std::size_t>(y) * side + x] =
                    std::min(1.0, std::max(0.0, v));
        }
    if (f.ring) draw_ellipse(img, f.cx, f.cy, f.rx * 1.12, f.ry * 1.12, 0.05);
    draw_ellipse(img, f.cx, f.cy, f.rx, f.ry, f.face_level);
    draw_ellipse(img, f.landmarks[0], f.landmarks[1], f.eye_r, f.eye_r, 0.0);
    draw_ellipse(img, f.landmarks[2], f.landmarks[3], f.eye_r, f.eye_r, 0.0);
    if (f.nose) draw_ellipse(img, f.landmarks[4], f.landmarks[5], 0.10 * f.rx, 0.10 * f.ry, 0.15);
    if (f.mouth) draw_rect(img, f.cx, f.cy + 0.48 * f.ry, 0.55 * f.rx, 0.14 * f.ry, 0.0);
    if (f.brows) {
        draw_rect(img, f.landmarks[0], f.landmarks[1] - 2.2 * f.eye_r, 1.4 * f.eye_r, 0.5 * f.eye_r, 0.08);
        draw_rect(img, f.landmarks[2], f.landmarks[3] - 2.2 * f.eye_r, 1.4 * f.eye_r, 0.5 * f.eye_r, 0.08);
    }
    return img;
}

}  // namespace detail

// Writes images/ plus manifest.txt under opts-specified out_dir; returns the
// manifest. Landmark records always carry 5 points.
inline DatasetManifest generate_synthetic_dataset(const SynthOptions& opts,
                                                  const std::filesystem::path& out_dir) {
    if (opts.num_attributes < 1 || opts.num_attributes > 8)
        throw std::invalid_argument("synth: num_attributes must be in 1..8");
    if (opts.image_side < 16) throw std::invalid_argument("synth: image_side must be >= 16");
    if (opts.count < 1) throw std::invalid_argument("synth: count must be >= 1");

    std::filesystem::create_directories(out_dir / "images");
    std::mt19937_64 rng(opts.seed);

    // kind counts by largest remainder, at least mirroring the mixture
    const double fsum = opts.frac_attribute + opts.frac_landmark + opts.frac_face + opts.frac_nonface;
    if (fsum <= 0.0) throw std::invalid_argument("synth: mixture fractions sum to zero");
    const double fr[4] = {opts.frac_attribute / fsum, opts.frac_landmark / fsum,
                          opts.frac_face / fsum, opts.frac_nonface / fsum};
    int counts[4];
    int assigned = 0;
    for (int i = 0; i < 4; ++i) {
        counts[i] = static_cast<int>(fr[i] * opts.count);
        assigned += counts[i];
    }
    for (int i = 0; assigned < opts.count; i = (i + 1) % 4)
        if (fr[i] > 0.0) {
            ++counts[i];
            ++assigned;
        }
    std::vector<SampleKind> kinds;
    const SampleKind order[4] = {SampleKind::attribute, SampleKind::landmark, SampleKind::face,
                                 SampleKind::nonface};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < counts[i]; ++j) kinds.push_back(order[i]);
    std::shuffle(kinds.begin(), kinds.end(), rng);

    DatasetManifest m;
    m.base_dir = out_dir;
    m.num_attributes = opts.num_attributes;
    m.num_landmarks = 5;

    for (int i = 0; i < opts.count; ++i) {
        auto face = detail::make_face(rng, opts.image_side, opts.num_attributes);
        Tensor img = detail::render_face(face, rng, opts.image_side, opts.channels);
        char name[64];
        std::snprintf(name, sizeof(name), "images/%04d.%s", i, opts.channels == 1 ? "pgm" : "ppm");

        ManifestRecord rec;
        rec.kind = kinds[i];
        rec.image_path = name;
        if (rec.kind == SampleKind::nonface) {
            // replace the image with an IoU-gated background crop of it
            auto boxes = sample_nonface_boxes(opts.image_side, opts.image_side, face.bbox, 1,
                                              rng());
            const int crop_side = std::max(4, static_cast<int>(std::lround(boxes[0].width)));
            write_pnm(crop_resize(img, boxes[0], crop_side), out_dir / name);
        } else {
            write_pnm(img, out_dir / name);
            rec.box = face.bbox;
            if (rec.kind == SampleKind::landmark) rec.landmarks_px = face.landmarks;
            if (rec.kind == SampleKind::attribute) rec.attributes = face.attrs;
        }
        m.records.push_back(std::move(rec));
    }
    save_manifest(m, out_dir / "manifest.txt");
    return m;
}

}  // namespace mcfa
