#include "irnet/layers.hpp"

#include <cmath>
#include <string>

namespace irnet {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) raise(Errc::shape_mismatch, what);
}

void check_layer(const LstmLayerParams& p, Eigen::Index input_dim, const char* where) {
  const Tensor* weights[] = {&p.W_f, &p.W_i, &p.W_o, &p.W_c};
  const Tensor* biases[] = {&p.b_f, &p.b_i, &p.b_o, &p.b_c};
  for (const Tensor* w : weights) {
    require(w->defined() && w->rank() == 2, std::string(where) + ": gate weights must be rank 2");
  }
  const Eigen::Index hidden = p.W_f.dim(0);
  require(hidden >= 1, std::string(where) + ": hidden dim must be >= 1");
  for (const Tensor* w : weights) {
    require(w->dim(0) == hidden && w->dim(1) == input_dim + hidden,
            std::string(where) + ": every gate weight must be [hidden, input + hidden]");
  }
  for (const Tensor* b : biases) {
    require(b->defined() && b->rank() == 1 && b->dim(0) == hidden,
            std::string(where) + ": every gate bias must be [hidden]");
  }
}

Tensor gate(const Tensor& xh, const Tensor& W, const Tensor& b) {
  return add(matmul(W, xh), b);
}

}  // namespace

LstmState lstm_cell(const Tensor& x, const Tensor& hs_prev, const Tensor& cs_prev,
                    const LstmLayerParams& params) {
  require(x.defined() && x.rank() == 1, "lstm_cell: x must be rank 1");
  check_layer(params, x.dim(0), "lstm_cell");
  const Eigen::Index hidden = params.hidden_dim();
  require(hs_prev.defined() && hs_prev.rank() == 1 && hs_prev.dim(0) == hidden,
          "lstm_cell: hs_prev must be [hidden]");
  require(cs_prev.defined() && cs_prev.rank() == 1 && cs_prev.dim(0) == hidden,
          "lstm_cell: cs_prev must be [hidden]");

  Tensor xh = concat({x, hs_prev}, 0);
  Tensor g_f = sigmoid(gate(xh, params.W_f, params.b_f));
  Tensor g_i = sigmoid(gate(xh, params.W_i, params.b_i));
  Tensor g_o = sigmoid(gate(xh, params.W_o, params.b_o));
  Tensor cand = tanh(gate(xh, params.W_c, params.b_c));

  LstmState state;
  state.cs = add(mul(g_f, cs_prev), mul(g_i, cand));
  state.hs = mul(g_o, tanh(state.cs));
  return state;
}

std::vector<Tensor> lstm_forward(const std::vector<Tensor>& sequence, const LstmParams& params) {
  require(!sequence.empty(), "lstm_forward: empty sequence");
  require(!params.empty(), "lstm_forward: no layers");
  for (const Tensor& x : sequence) {
    require(x.defined() && x.rank() == 1 && x.dim(0) == sequence.front().dim(0),
            "lstm_forward: inputs must be rank 1 with a common length");
  }
  Eigen::Index input_dim = sequence.front().dim(0);
  for (std::size_t l = 0; l < params.size(); ++l) {
    check_layer(params[l], input_dim, "lstm_forward");
    input_dim = params[l].hidden_dim();
  }

  std::vector<Tensor> inputs = sequence;
  for (const LstmLayerParams& layer : params) {
    const Eigen::Index hidden = layer.hidden_dim();
    LstmState state{Tensor::zeros({hidden}), Tensor::zeros({hidden})};
    std::vector<Tensor> outputs;
    outputs.reserve(inputs.size());
    for (const Tensor& x : inputs) {
      state = lstm_cell(x, state.hs, state.cs, layer);
      outputs.push_back(state.hs);
    }
    inputs = std::move(outputs);
  }
  return inputs;
}

Tensor fc(const Tensor& x, const FcParams& params) {
  require(params.W.defined() && params.W.rank() == 2, "fc: W must be rank 2");
  require(params.b.defined() && params.b.rank() == 1 && params.b.dim(0) == params.W.dim(0),
          "fc: b must be [out]");
  require(x.defined(), "fc: undefined input");
  if (x.rank() == 1) {
    require(x.dim(0) == params.W.dim(1), "fc: input length must equal W columns");
    return add(matmul(params.W, x), params.b);
  }
  require(x.rank() == 2 && x.dim(1) == params.W.dim(1),
          "fc: input must be rank 1 [in] or rank 2 [n, in]");
  return add(matmul(x, transpose(params.W)), params.b);
}

std::vector<Tensor> intersection_conv(const Tensor& m, const ConvParams& params) {
  require(m.defined() && m.rank() == 2, "intersection_conv: input must be rank 2");
  require(!params.channels.empty(), "intersection_conv: no channels");
  const Eigen::Index k = params.channels.front().kernel.defined()
                             ? params.channels.front().kernel.dim(0)
                             : 0;
  for (const ConvChannelParams& ch : params.channels) {
    require(ch.kernel.defined() && ch.kernel.rank() == 2 && ch.kernel.dim(0) == k &&
                ch.kernel.dim(1) == 1 && k >= 1,
            "intersection_conv: every kernel must be [k, 1]");
    require(ch.bias.defined() && ch.bias.rank() == 0, "intersection_conv: bias must be a scalar");
  }
  if (m.dim(0) % k != 0) {
    raise(Errc::rows_not_divisible, "intersection_conv: input rows " + std::to_string(m.dim(0)) +
                                        " not divisible by kernel height " + std::to_string(k));
  }

  std::vector<Tensor> out;
  out.reserve(params.channels.size());
  for (const ConvChannelParams& ch : params.channels) {
    out.push_back(sigmoid(conv2d(m, ch.kernel, ch.bias, static_cast<int>(k), 1)));
  }
  return out;
}

std::vector<Tensor> to_feature_sequence(const std::vector<Tensor>& conv_out) {
  require(!conv_out.empty(), "to_feature_sequence: no channels");
  const Tensor& first = conv_out.front();
  require(first.defined() && first.rank() == 2, "to_feature_sequence: channels must be rank 2");
  for (const Tensor& ch : conv_out) {
    require(ch.defined() && ch.rank() == 2 && ch.dim(0) == first.dim(0) &&
                ch.dim(1) == first.dim(1),
            "to_feature_sequence: all channels must share one shape");
  }

  const Eigen::Index h = first.dim(1);
  std::vector<Tensor> sequence;
  sequence.reserve(static_cast<std::size_t>(h));
  for (Eigen::Index t = 0; t < h; ++t) {
    std::vector<Tensor> columns;
    columns.reserve(conv_out.size());
    for (const Tensor& ch : conv_out) {
      columns.push_back(flatten(slice(ch, 1, t, t + 1)));
    }
    sequence.push_back(concat(columns, 0));
  }
  return sequence;
}

AttentionResult self_attention(const Tensor& stack, const AttentionParams& params) {
  require(stack.defined() && stack.rank() == 2 && stack.dim(0) >= 1,
          "self_attention: stack must be [n, in] with n >= 1");
  const FcParams* projections[] = {&params.q, &params.k, &params.v};
  for (const FcParams* p : projections) {
    require(p->W.defined() && p->W.rank() == 2 && p->W.dim(1) == stack.dim(1),
            "self_attention: projection W must be [width, in]");
    require(p->b.defined() && p->b.rank() == 1 && p->b.dim(0) == p->W.dim(0),
            "self_attention: projection b must be [width]");
  }
  const Eigen::Index width = params.q.W.dim(0);
  require(params.k.W.dim(0) == width && params.v.W.dim(0) == width,
          "self_attention: q, k, v must share one output width");

  Tensor Q = fc(stack, params.q);
  Tensor K = fc(stack, params.k);
  Tensor V = fc(stack, params.v);
  Tensor scores = scale(matmul(Q, transpose(K)), 1.0 / std::sqrt(static_cast<double>(width)));

  AttentionResult result;
  result.weights = softmax(scores, 1);
  result.output = matmul(result.weights, V);
  return result;
}

}  // namespace irnet
