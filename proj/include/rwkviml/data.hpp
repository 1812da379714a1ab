#pragma once

#include <string>
#include <vector>

#include "rwkviml/rng.hpp"
#include "rwkviml/tensor.hpp"

namespace iml {

enum class Split { kTrain, kTest };

struct Sample {
    std::string id;
    Tensor<float> image;  // (H, W, 3) in [0, 1]
    Tensor<float> mask;   // (H, W, 1) strictly 0/1; 1 marks manipulated pixels
};

struct ManifestEntry {
    std::string id;
    std::string image_path;
    std::string mask_path;
    Split split = Split::kTrain;
};

struct Manifest {
    std::string root;
    std::vector<ManifestEntry> entries;

    std::vector<const ManifestEntry*> subset(Split s) const;
};

// Reads `root/manifest.tsv` (id <TAB> train|test) when present, otherwise
// pairs `root/images/*.png` with `root/masks/*.png` by stem and holds out
// every seventh id (train:test 6:1, floor on test). Entries come back
// sorted by id either way.
Manifest load_manifest(const std::string& root);

// image scaled to [0,1]; gray masks binarized at 128
Sample load_sample(const ManifestEntry& entry);

void write_sample_png(const std::string& image_path, const std::string& mask_path,
                      const Tensor<float>& image, const Tensor<float>& mask);

// Smooth random backgrounds with 1-3 recolored elliptical or polygonal
// inserts, feathered at the border; masks are the exact insert supports.
// Writes images/, masks/, and manifest.tsv under root.
void gen_synthetic(const std::string& root, int n, int size, std::uint64_t seed);

Sample flip_horizontal(const Sample& s);

// coin-flip horizontal flip plus brightness shift bounded by max_delta
Sample augment(const Sample& s, Rng& rng, float max_delta = 0.1f);

}  // namespace iml
