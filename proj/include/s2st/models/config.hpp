#pragma once

#include <string>

namespace s2st::models {

// Scaled-down analogue of the published encoder/decoder sizes.
struct ModelPreset {
  std::string name = "base";
  std::size_t encoder_dim = 32;
  std::size_t encoder_blocks = 2;
  std::size_t decoder_dim = 32;
  std::size_t decoder_layers = 2;
  std::size_t heads = 2;
  std::size_t ff_expansion = 2;
  std::size_t conv_kernel = 3;
  std::size_t synth_hidden = 32;
  std::size_t codebook_size = 16;
};

// "base" = 32x2 encoder, 32x2 decoder; "large" = 64x4 encoder, 48x3 decoder.
ModelPreset preset(const std::string& name);

// Vocabulary / feature sizes fixed by the toy world.
struct DataShape {
  std::size_t mel_bins = 8;
  std::size_t target_vocab = 12;  // BOS, EOS, target phonemes
  std::size_t text_vocab = 22;
  std::size_t num_phonemes = 12;  // global phoneme id space
};

struct ModelConfig {
  ModelPreset preset;
  DataShape data;
  double dropout = 0.1;
  double decoder_dropout = 0.1;
  int max_duration = 16;
};

// Blocks [0, contrastive_blocks) form the contrastive network, the rest the
// context network.
inline std::size_t contrastive_blocks(const ModelPreset& p) { return p.encoder_blocks / 2; }
inline std::size_t context_blocks(const ModelPreset& p) { return p.encoder_blocks - p.encoder_blocks / 2; }

}  // namespace s2st::models
