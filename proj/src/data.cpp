#include "rwkviml/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "rwkviml/error.hpp"
#include "rwkviml/png_io.hpp"

namespace fs = std::filesystem;

namespace iml {

std::vector<const ManifestEntry*> Manifest::subset(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == s) out.push_back(&e);
    return out;
}

namespace {

Split split_for_index(std::size_t i) { return i % 7 == 6 ? Split::kTest : Split::kTrain; }

std::vector<std::pair<std::string, Split>> ids_from_manifest_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<std::pair<std::string, Split>> ids;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("manifest.tsv line " + std::to_string(lineno) +
                            " is not id<TAB>split: " + line);
        const std::string id = line.substr(0, tab);
        const std::string split = line.substr(tab + 1);
        if (!seen.insert(id).second)
            throw DataError("duplicate id '" + id + "' in manifest.tsv");
        if (split != "train" && split != "test")
            throw DataError("manifest.tsv line " + std::to_string(lineno) +
                            " has unknown split '" + split + "'");
        ids.emplace_back(id, split == "train" ? Split::kTrain : Split::kTest);
    }
    return ids;
}

std::vector<std::pair<std::string, Split>> ids_from_paired_dirs(const fs::path& root) {
    const fs::path imgs = root / "images";
    if (!fs::is_directory(imgs)) throw DataError("missing images/ directory under " + root.string());
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(imgs))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            stems.push_back(entry.path().stem().string());
    std::sort(stems.begin(), stems.end());
    std::vector<std::pair<std::string, Split>> ids;
    for (std::size_t i = 0; i < stems.size(); ++i)
        ids.emplace_back(stems[i], split_for_index(i));
    return ids;
}

}  // namespace

Manifest load_manifest(const std::string& root) {
    if (!fs::is_directory(root)) throw DataError("dataset root " + root + " is not a directory");
    const fs::path rootp(root);
    auto ids = fs::exists(rootp / "manifest.tsv") ? ids_from_manifest_file(rootp / "manifest.tsv")
                                                  : ids_from_paired_dirs(rootp);
    std::sort(ids.begin(), ids.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (ids.empty()) throw DataError("no samples under " + root);

    Manifest m;
    m.root = root;
    std::string problems;
    for (const auto& [id, split] : ids) {
        ManifestEntry e;
        e.id = id;
        e.image_path = (rootp / "images" / (id + ".png")).string();
        e.mask_path = (rootp / "masks" / (id + ".png")).string();
        e.split = split;
        if (!fs::exists(e.image_path)) problems += "missing image for '" + id + "'\n";
        if (!fs::exists(e.mask_path)) problems += "missing mask for '" + id + "'\n";
        m.entries.push_back(std::move(e));
    }
    if (!problems.empty()) throw DataError("incomplete dataset under " + root + ":\n" + problems);
    return m;
}

Sample load_sample(const ManifestEntry& entry) {
    const PngImage img = read_png(entry.image_path);
    const PngImage msk = read_png(entry.mask_path);
    if (img.height != msk.height || img.width != msk.width)
        throw DataError("sample '" + entry.id + "': image is " + std::to_string(img.height) +
                        "x" + std::to_string(img.width) + " but mask is " +
                        std::to_string(msk.height) + "x" + std::to_string(msk.width));

    Sample s;
    s.id = entry.id;
    s.image = Tensor<float>({img.height, img.width, 3});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                s.image.at(y, x, c) =
                    static_cast<float>(img.at(y, x, img.channels == 3 ? c : 0)) / 255.0f;
    s.mask = Tensor<float>({msk.height, msk.width, 1});
    for (int y = 0; y < msk.height; ++y)
        for (int x = 0; x < msk.width; ++x)
            s.mask.at(y, x, 0) = msk.at(y, x, 0) >= 128 ? 1.0f : 0.0f;
    return s;
}

void write_sample_png(const std::string& image_path, const std::string& mask_path,
                      const Tensor<float>& image, const Tensor<float>& mask) {
    const int h = image.dim(0), w = image.dim(1);
    std::vector<std::uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (std::int64_t i = 0; i < image.numel(); ++i)
        rgb[static_cast<size_t>(i)] = static_cast<std::uint8_t>(
            std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
    write_png(image_path, rgb.data(), h, w, 3);

    std::vector<std::uint8_t> gray(static_cast<size_t>(h) * w);
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        gray[static_cast<size_t>(i)] = mask[i] == 1.0f ? 255 : 0;
    write_png(mask_path, gray.data(), h, w, 1);
}

namespace {

struct Shape {
    bool ellipse = true;
    // ellipse: center, axes, rotation
    double cx = 0, cy = 0, ax = 1, ay = 1, rot = 0;
    // polygon: star-shaped vertex loop
    std::vector<std::pair<double, double>> verts;

    bool contains(double x, double y) const {
        if (ellipse) {
            const double dx = x - cx, dy = y - cy;
            const double c = std::cos(rot), s = std::sin(rot);
            const double u = (c * dx + s * dy) / ax;
            const double v = (-s * dx + c * dy) / ay;
            return u * u + v * v <= 1.0;
        }
        bool in = false;
        for (std::size_t i = 0, j = verts.size() - 1; i < verts.size(); j = i++) {
            const auto [xi, yi] = verts[i];
            const auto [xj, yj] = verts[j];
            if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
        }
        return in;
    }

    double boundary_distance(double x, double y) const {
        if (ellipse) {
            const double dx = x - cx, dy = y - cy;
            const double c = std::cos(rot), s = std::sin(rot);
            const double u = (c * dx + s * dy) / ax;
            const double v = (-s * dx + c * dy) / ay;
            return (std::sqrt(u * u + v * v) - 1.0) * std::min(ax, ay);
        }
        double best = 1e30;
        for (std::size_t i = 0, j = verts.size() - 1; i < verts.size(); j = i++) {
            const auto [xi, yi] = verts[i];
            const auto [xj, yj] = verts[j];
            const double ex = xj - xi, ey = yj - yi;
            const double t = std::clamp(((x - xi) * ex + (y - yi) * ey) / (ex * ex + ey * ey),
                                        0.0, 1.0);
            const double px = xi + t * ex - x, py = yi + t * ey - y;
            best = std::min(best, std::sqrt(px * px + py * py));
        }
        return contains(x, y) ? -best : best;
    }
};

Shape random_shape(Rng& rng, int size) {
    Shape sh;
    sh.ellipse = rng.uniform() < 0.6;
    sh.cx = size * rng.uniform(0.22, 0.78);
    sh.cy = size * rng.uniform(0.22, 0.78);
    if (sh.ellipse) {
        sh.ax = size * rng.uniform(0.06, 0.16);
        sh.ay = size * rng.uniform(0.06, 0.16);
        sh.rot = rng.uniform(0.0, 3.14159265358979);
    } else {
        const int k = 3 + static_cast<int>(rng.uniform_int(0, 4));
        const double base_r = size * rng.uniform(0.07, 0.16);
        std::vector<double> angs(static_cast<size_t>(k));
        for (auto& a : angs) a = rng.uniform(0.0, 2.0 * 3.14159265358979);
        std::sort(angs.begin(), angs.end());
        for (double a : angs) {
            const double r = base_r * rng.uniform(0.7, 1.0);
            sh.verts.emplace_back(sh.cx + r * std::cos(a), sh.cy + r * std::sin(a));
        }
    }
    return sh;
}

}  // namespace

void gen_synthetic(const std::string& root, int n, int size, std::uint64_t seed) {
    if (n < 1) throw ConfigError("synthetic corpus needs n >= 1, got " + std::to_string(n));
    if (size < 64 || size % 64 != 0)
        throw ConfigError("synthetic size must be a positive multiple of 64, got " +
                          std::to_string(size));
    const fs::path rootp(root);
    fs::create_directories(rootp / "images");
    fs::create_directories(rootp / "masks");
    std::ofstream mani(rootp / "manifest.tsv", std::ios::binary);
    if (!mani) throw DataError("cannot write manifest.tsv under " + root);

    for (int i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "synth_%04d", i);
        const std::string id = buf;
        Rng rng = step_rng(seed, static_cast<std::uint64_t>(i), 0);

        // low-frequency background per channel
        double base[3], amp[3][2], fx[3][2], fy[3][2], ph[3][2];
        for (int c = 0; c < 3; ++c) {
            base[c] = rng.uniform(0.3, 0.7);
            for (int k = 0; k < 2; ++k) {
                amp[c][k] = rng.uniform(0.03, 0.1);
                fx[c][k] = rng.uniform(0.5, 2.5) * 2.0 * 3.14159265358979 / size;
                fy[c][k] = rng.uniform(0.5, 2.5) * 2.0 * 3.14159265358979 / size;
                ph[c][k] = rng.uniform(0.0, 6.28);
            }
        }
        Tensor<float> image({size, size, 3});
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                for (int c = 0; c < 3; ++c) {
                    double v = base[c];
                    for (int k = 0; k < 2; ++k)
                        v += amp[c][k] * std::sin(fx[c][k] * x + fy[c][k] * y + ph[c][k]);
                    image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }

        Tensor<float> mask({size, size, 1});
        const int nregions = 1 + static_cast<int>(rng.uniform_int(0, 2));
        for (int r = 0; r < nregions; ++r) {
            const Shape sh = random_shape(rng, size);
            // strong recolor: push each channel away from the background base
            double target[3];
            for (int c = 0; c < 3; ++c) {
                const double off = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 0.5);
                target[c] = std::clamp(base[c] + off, 0.02, 0.98);
            }
            const double feather = 2.0;
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double d = sh.boundary_distance(x, y);
                    if (d > feather) continue;
                    if (sh.contains(x, y)) mask.at(y, x, 0) = 1.0f;
                    const double alpha = std::clamp(0.5 - d / feather, 0.0, 1.0) * 0.8;
                    for (int c = 0; c < 3; ++c) {
                        const double bg = image.at(y, x, c);
                        image.at(y, x, c) =
                            static_cast<float>(std::clamp(bg + alpha * (target[c] - bg), 0.0, 1.0));
                    }
                }
        }

        write_sample_png((rootp / "images" / (id + ".png")).string(),
                         (rootp / "masks" / (id + ".png")).string(), image, mask);
        mani << id << '\t' << (split_for_index(static_cast<std::size_t>(i)) == Split::kTest
                                   ? "test"
                                   : "train")
             << '\n';
    }
}

Sample flip_horizontal(const Sample& s) {
    Sample out;
    out.id = s.id;
    const int h = s.image.dim(0), w = s.image.dim(1);
    out.image = Tensor<float>({h, w, 3});
    out.mask = Tensor<float>({h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = s.image.at(y, w - 1 - x, c);
            out.mask.at(y, x, 0) = s.mask.at(y, w - 1 - x, 0);
        }
    return out;
}

Sample augment(const Sample& s, Rng& rng, float max_delta) {
    Sample out = rng.bernoulli(0.5) ? flip_horizontal(s) : s;
    const float delta = static_cast<float>(rng.uniform(-max_delta, max_delta));
    for (std::int64_t i = 0; i < out.image.numel(); ++i)
        out.image[i] = std::clamp(out.image[i] + delta, 0.0f, 1.0f);
    return out;
}

}  // namespace iml
