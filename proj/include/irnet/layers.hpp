#pragma once

#include <vector>

#include "irnet/gradcore.hpp"

namespace irnet {

// ---- LSTM -------------------------------------------------------------

/// Parameters of one LSTM layer. Every gate weight acts on the
/// concatenation [x_t; h_prev], so its shape is
/// [hidden, input + hidden]; biases have shape [hidden].
struct LstmLayerParams {
  Tensor W_f, b_f;  // forget gate
  Tensor W_i, b_i;  // input gate
  Tensor W_o, b_o;  // output gate
  Tensor W_c, b_c;  // candidate cell state

  Eigen::Index hidden_dim() const { return W_f.dim(0); }
  Eigen::Index input_dim() const { return W_f.dim(1) - W_f.dim(0); }
};

/// A stack of LSTM layers; layer l consumes layer l-1's hidden sequence.
using LstmParams = std::vector<LstmLayerParams>;

/// Hidden and cell state of one LSTM layer at one time step (rank-1 tensors
/// of length hidden_dim).
struct LstmState {
  Tensor hs;
  Tensor cs;
};

/// One LSTM time step:
///   g_f = sigmoid(W_f [x; h] + b_f)    (likewise g_i, g_o)
///   cand = tanh(W_c [x; h] + b_c)
///   cs_t = g_f * cs_prev + g_i * cand
///   hs_t = g_o * tanh(cs_t)
/// Errors: ShapeMismatch.
LstmState lstm_cell(const Tensor& x, const Tensor& hs_prev, const Tensor& cs_prev,
                    const LstmLayerParams& params);

/// Unrolls a stacked LSTM over `sequence` (rank-1 inputs) with zero initial
/// states and returns the top layer's hidden state at every step.
/// Errors: ShapeMismatch (empty sequence, no layers, inconsistent dims).
std::vector<Tensor> lstm_forward(const std::vector<Tensor>& sequence, const LstmParams& params);

// ---- fully connected ----------------------------------------------------

/// Affine map y = W x + b with W of shape [out, in] and b of shape [out].
struct FcParams {
  Tensor W;
  Tensor b;

  Eigen::Index out_dim() const { return W.dim(0); }
  Eigen::Index in_dim() const { return W.dim(1); }
};

/// Applies the affine map to a rank-1 input ([in] -> [out]) or row-wise to
/// a rank-2 input ([n, in] -> [n, out]).
/// Errors: ShapeMismatch.
Tensor fc(const Tensor& x, const FcParams& params);

// ---- intersection convolution -------------------------------------------

/// One convolution channel: a [k, 1] kernel plus a scalar bias.
struct ConvChannelParams {
  Tensor kernel;
  Tensor bias;
};

/// A bank of channels sharing the same kernel height k.
struct ConvParams {
  std::vector<ConvChannelParams> channels;

  Eigen::Index kernel_rows() const { return channels.front().kernel.dim(0); }
};

/// Convolves a [rows, h] speed matrix with every channel's [k, 1] kernel at
/// stride [k, 1] (no padding) and applies a sigmoid, so each k-row block —
/// one intersection's slots — collapses to a single value per time column.
/// Returns one [rows / k, h] tensor per channel.
/// Errors: RowsNotDivisible (rows % k != 0), ShapeMismatch.
std::vector<Tensor> intersection_conv(const Tensor& m, const ConvParams& params);

/// Rearranges per-channel conv outputs (each [r, h]) into a sequence of h
/// rank-1 feature vectors of length channels * r: vector t holds column t of
/// every channel, channel-major then row.
/// Errors: ShapeMismatch.
std::vector<Tensor> to_feature_sequence(const std::vector<Tensor>& conv_out);

// ---- scaled dot-product self-attention ------------------------------------

/// Row-wise projections producing queries, keys, and values; all three map
/// to the same output width.
struct AttentionParams {
  FcParams q;
  FcParams k;
  FcParams v;
};

/// Attention output together with the [n, n] weight matrix
/// softmax(Q K^T / sqrt(width)) so callers can inspect the mixing weights.
struct AttentionResult {
  Tensor output;
  Tensor weights;
};

/// Scaled dot-product self-attention over the rows of `stack` ([n, in]):
/// output = softmax(Q K^T / sqrt(width)) V, each projection row-wise.
/// Errors: ShapeMismatch.
AttentionResult self_attention(const Tensor& stack, const AttentionParams& params);

}  // namespace irnet
