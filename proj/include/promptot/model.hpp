#ifndef PROMPTOT_MODEL_HPP
#define PROMPTOT_MODEL_HPP

// Inference path. Nothing here may depend on the OT or constraint code.

#include "promptot/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>

namespace promptot::model {

struct Dims {
  Eigen::Index input = 16;       // vision input width
  Eigen::Index text_input = 8;   // class-embedding width
  Eigen::Index prompt = 4;
  Eigen::Index hidden = 32;
  Eigen::Index embedding = 8;
};

/// One modality: out = normalize(w2 * tanh(w1 * [input || prompt])).
struct EncoderWeights {
  Matrix w1;  // hidden x (input + prompt)
  Matrix w2;  // embedding x hidden

  Eigen::Index input_dim() const { return w1.cols() - prompt_dim; }
  Eigen::Index prompt_dim = 0;
};

struct PromptParams {
  Vector p;  // vision
  Vector q;  // text
};

/// The adapted model and its frozen zero-shot twin share encoder weights;
/// only `adapted` prompts are ever written after pretraining.
struct ModelPair {
  EncoderWeights vision;
  EncoderWeights text;
  PromptParams adapted;
  PromptParams zero_shot;
  double tau = 0.01;
  std::uint64_t seed = 0;
};

struct EncoderCache {
  Matrix augmented;  // [input || prompt] per row
  Matrix hidden;     // tanh activations
  Matrix raw;        // pre-normalization embeddings
  Vector norms;
  Matrix out;
};

struct EncoderGrads {
  Matrix w1;
  Matrix w2;
  Vector prompt;
};

EncoderWeights init_encoder(Rng& rng, Eigen::Index input, Eigen::Index prompt, Eigen::Index hidden,
                            Eigen::Index embedding);

Matrix encode(const Matrix& inputs, const EncoderWeights& w, const Vector& prompt, EncoderCache* cache = nullptr);

inline Matrix encode_vision(const Matrix& inputs, const EncoderWeights& w, const Vector& p,
                            EncoderCache* cache = nullptr) {
  return encode(inputs, w, p, cache);
}

inline Matrix encode_text(const Matrix& class_inputs, const EncoderWeights& u, const Vector& q,
                          EncoderCache* cache = nullptr) {
  return encode(class_inputs, u, q, cache);
}

/// Backpropagates d(loss)/d(out) to the prompt and, if requested, the weights.
EncoderGrads encoder_backward(const EncoderCache& cache, const EncoderWeights& w, const Matrix& d_out,
                              bool weight_grads);

/// <h_i, g_k> / tau
Matrix logits(const Matrix& h, const Matrix& g, double tau);

/// Class probabilities: row-wise softmax of the temperature-scaled cosine similarities.
Matrix predict(const Matrix& h, const Matrix& g, double tau);

/// Accuracy of the adapted model over `class_set` (global class ids). Labels
/// are global class ids and must belong to the class set.
double evaluate(const ModelPair& model, const Matrix& rows, std::span<const int> labels,
                std::span<const int> class_set, const Matrix& class_inputs);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const ModelPair& model, const std::filesystem::path& path);
ModelPair load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_text(const ModelPair& model);

}  // namespace promptot::model

#endif  // PROMPTOT_MODEL_HPP
