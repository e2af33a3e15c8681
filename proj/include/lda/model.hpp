#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lda/tensor.hpp"

namespace lda {

struct ModelDims {
  std::size_t input = 0;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t rep = 32;
  std::size_t classes = 0;
  std::size_t proj = 0;  // 0 resolves to 2 * rep
};

// baseline: encoder + one classifier (the cross-entropy reference model).
// lda: encoder + unbalanced classifier h', balanced classifier h and
// projection head p. Only h predicts at inference for either kind.
enum class ModelKind { baseline, lda };

struct AffineLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct ForwardTrain {
  Tensor rep;       // n x d_rep
  Tensor logits_b;  // n x C, balanced classifier h
  Tensor logits_u;  // n x C, unbalanced classifier h' (lda only)
  Tensor proj;      // n x d_proj (lda only)
};

class LdaModel {
 public:
  // Glorot-uniform weights, zero biases; bit-identical per seed. The single
  // baseline classifier shares its init stream with the lda h' so CE and
  // alpha=0 LDA runs are trajectory-comparable.
  static LdaModel init(ModelKind kind, ModelDims dims, std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  const ModelDims& dims() const { return dims_; }

  // Joint forward on one tape: all heads read the shared representation, so
  // the encoder gradient sums the contributions of every active head.
  ForwardTrain forward_train(const Tensor& batch) const;

  // Encoder + h only; h' and p are never evaluated.
  Tensor forward_infer(const Tensor& batch) const;

  // Argmax of h logits per row; ties resolve to the lowest class index.
  std::vector<int> predict(std::span<const double> features,
                           std::size_t num_rows) const;

  const std::vector<AffineLayer>& encoder() const { return encoder_; }
  const AffineLayer& head_balanced() const { return head_balanced_; }
  const AffineLayer& head_unbalanced() const { return head_unbalanced_; }
  const AffineLayer& projection() const { return projection_; }

  // All parameters in checkpoint order.
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> encoder_parameters() const;
  std::vector<Tensor> classifier_parameters() const;  // heads + projection
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  void save(const std::filesystem::path& path) const;
  // Fills this model's parameters from a checkpoint; a kind/shape mismatch
  // raises CheckpointError naming the offending layer.
  void load_weights(const std::filesystem::path& path);
  static LdaModel load(const std::filesystem::path& path);

 private:
  LdaModel() = default;
  ModelKind kind_ = ModelKind::lda;
  ModelDims dims_;
  std::vector<AffineLayer> encoder_;
  AffineLayer head_unbalanced_;
  AffineLayer head_balanced_;
  AffineLayer projection_;
};

}  // namespace lda
