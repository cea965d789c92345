#include "condition/embedding.hpp"

#include <cmath>

#include "common/error.hpp"

namespace ds {

namespace {

Tensor scalar_features(const std::vector<EgoState>& egos) {
  std::vector<double> v;
  v.reserve(egos.size() * 3);
  for (const auto& e : egos) {
    v.push_back(e.velocity * kVelocityScale);
    v.push_back(std::sin(e.direction_angle));
    v.push_back(std::cos(e.direction_angle));
  }
  return Tensor({egos.size(), 3}, std::move(v));
}

}  // namespace

ScalarEmbedder ScalarEmbedder::create(ParameterStore& store, const std::string& name, std::size_t embed_dim,
                                      std::size_t model_dim, double lr_mult) {
  ScalarEmbedder s;
  s.embed_dim = embed_dim;
  s.camera_table = store.create_normal(name + ".camera", {kViewCount, embed_dim}, 1.0, lr_mult);
  s.fc1 = nn::Linear::create(store, name + ".fc1", embed_dim + 3, model_dim, lr_mult);
  s.fc2 = nn::Linear::create(store, name + ".fc2", model_dim, model_dim, lr_mult);
  return s;
}

Tensor ScalarEmbedder::camera_vector(ViewId view) const {
  const std::size_t i = view_index(view);
  return ops::reshape(ops::slice(camera_table, 0, i, i + 1), {embed_dim});
}

Tensor ScalarEmbedder::operator()(const std::vector<ViewId>& views, const std::vector<EgoState>& egos) const {
  if (views.size() != egos.size() || views.empty()) {
    throw ShapeError("scalar embedding: need one view per ego state");
  }
  std::vector<Tensor> rows;
  rows.reserve(views.size());
  for (ViewId v : views) {
    const std::size_t i = view_index(v);
    rows.push_back(ops::slice(camera_table, 0, i, i + 1));
  }
  const Tensor parts[] = {ops::concat(rows, 0), scalar_features(egos)};
  return ops::silu(fc2(ops::silu(fc1(ops::concat(parts, 1)))));
}

Tensor embed_scalars(const ScalarEmbedder& embedder, const Tensor& e, const EgoState& ego) {
  if (e.rank() != 1 || e.numel() != embedder.embed_dim) {
    throw ShapeError("embed_scalars: camera vector must be [" + std::to_string(embedder.embed_dim) + "], got " +
                     shape_str(e.shape()));
  }
  const Tensor parts[] = {ops::reshape(e, {1, embedder.embed_dim}), scalar_features({ego})};
  const Tensor out = ops::silu(embedder.fc2(ops::silu(embedder.fc1(ops::concat(parts, 1)))));
  return ops::reshape(out, {out.numel()});
}

}  // namespace ds
