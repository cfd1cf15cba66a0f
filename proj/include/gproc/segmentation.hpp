#pragma once

#include "gproc/geometry.hpp"
#include "gproc/params.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>

namespace gproc {

class EmptySegmentationError : public Error {
 public:
  using Error::Error;
};

struct SimilarityScore {
  double value = 0.0;  // 1 = identical
  double hull = 0.0;
  double triangle = 0.0;
  double normal = 1.0;
  double topology = 1.0;
  double normalDeviation = 0.0;  // radians, after alignment
  RigidTransform alignment;      // maps the first component onto the second
  bool flagged = false;          // alignment did not converge
};

/// Segmentation with per-model caches (connected parts, descriptors, pairwise
/// similarities) so repeated calls with different parameters stay cheap.
/// The model must outlive the segmenter.
class Segmenter {
 public:
  static std::unique_ptr<Segmenter> create(const Model& model, std::uint64_t seed = 0);
  virtual ~Segmenter() = default;

  virtual ComponentSet segment(const ShapeParams& params) = 0;
  virtual SimilarityScore similarity(const Component& a, const Component& b) = 0;
  const Model& model() const { return model_; }

 protected:
  explicit Segmenter(const Model& model) : model_(model) {}
  const Model& model_;
};

ComponentSet segment(const Model& model, const ShapeParams& params, std::uint64_t seed = 0);
ComponentSet segment_mesh(const Model& model, const ShapeParams& params);
ComponentSet segment_cloud(const Model& model, const ShapeParams& params, std::uint64_t seed = 0);

SimilarityScore mesh_similarity(const Model& model, const Component& a, const Component& b);
SimilarityScore cloud_similarity(const Model& model, const Component& a, const Component& b);

/// Builds a component (bbox and axis-aligned frame) from element indices.
Component make_component(const Model& model, std::vector<int> elements, int id);

/// Per-element label (noise = -1) for colour-coded export.
std::vector<int> element_labels(const Model& model, const ComponentSet& set);
void write_segmentation(const std::filesystem::path& path, const Model& model, const ComponentSet& set);

}  // namespace gproc
