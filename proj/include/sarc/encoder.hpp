// Bidirectional GRU + single-head scaled dot-product self-attention with a
// residual connection + masked mean pooling. Instantiated twice by the model
// (news and comments) with independent parameters.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sarc/rng.hpp"
#include "sarc/tensor.hpp"

namespace sarc {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], the rows of the matrix
// being its input dimension.
template <typename T>
Tensor<T> init_matrix(int rows, int cols, RunRng& rng) {
  Tensor<T> m({rows, cols});
  double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : m.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

template <typename T>
struct GruDirection {
  Tensor<T> wz, wr, wh;  // input weights, d_in x d_h
  Tensor<T> uz, ur, uh;  // recurrent weights, d_h x d_h
  Tensor<T> bz, br, bh;  // biases, 1 x d_h (zero-initialized)

  void init(int d_in, int d_h, RunRng& rng) {
    wz = init_matrix<T>(d_in, d_h, rng);
    wr = init_matrix<T>(d_in, d_h, rng);
    wh = init_matrix<T>(d_in, d_h, rng);
    uz = init_matrix<T>(d_h, d_h, rng);
    ur = init_matrix<T>(d_h, d_h, rng);
    uh = init_matrix<T>(d_h, d_h, rng);
    bz = Tensor<T>({1, d_h});
    br = Tensor<T>({1, d_h});
    bh = Tensor<T>({1, d_h});
  }

  void collect(NamedTensors<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".wz", wz);
    out.emplace_back(prefix + ".wr", wr);
    out.emplace_back(prefix + ".wh", wh);
    out.emplace_back(prefix + ".uz", uz);
    out.emplace_back(prefix + ".ur", ur);
    out.emplace_back(prefix + ".uh", uh);
    out.emplace_back(prefix + ".bz", bz);
    out.emplace_back(prefix + ".br", br);
    out.emplace_back(prefix + ".bh", bh);
  }

  Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h, T mask) const {
    return gru_cell(x, h, wz, wr, wh, uz, ur, uh, bz, br, bh, mask);
  }
};

template <typename T>
struct TextEncoderParams {
  int d_in = 0, d_h = 0, d_k = 0;
  GruDirection<T> fwd, bwd;
  Tensor<T> wq, wk;  // 2 d_h x d_k

  void init(int in_dim, int hidden_dim, int key_dim, RunRng& rng) {
    d_in = in_dim;
    d_h = hidden_dim;
    d_k = key_dim;
    fwd.init(d_in, d_h, rng);
    bwd.init(d_in, d_h, rng);
    wq = init_matrix<T>(2 * d_h, d_k, rng);
    wk = init_matrix<T>(2 * d_h, d_k, rng);
  }

  void collect(NamedTensors<T>& out, const std::string& prefix) {
    fwd.collect(out, prefix + ".fwd");
    bwd.collect(out, prefix + ".bwd");
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
  }
};

// Hidden states for every position, forward scan then backward scan
// concatenated columnwise: L x 2 d_h. A zero mask entry carries the previous
// state through, so trailing padding leaves real states untouched.
template <typename T>
Tensor<T> bigru_forward(const Tensor<T>& embedded, const std::vector<char>& mask,
                        const TextEncoderParams<T>& p) {
  int len = embedded.rows();
  if (embedded.cols() != p.d_in)
    throw std::invalid_argument("bigru: embedding dim " + std::to_string(embedded.cols()) +
                                " does not match configured " + std::to_string(p.d_in));
  if (static_cast<int>(mask.size()) != len)
    throw std::invalid_argument("bigru: mask length " + std::to_string(mask.size()) + " vs " +
                                std::to_string(len) + " positions");
  if (len < 1) throw std::invalid_argument("bigru: empty sequence");
  std::vector<Tensor<T>> x(len);
  for (int i = 0; i < len; ++i) x[i] = gather_rows(embedded, {i});
  std::vector<Tensor<T>> hf(len), hb(len);
  Tensor<T> h({1, p.d_h});
  for (int i = 0; i < len; ++i) {
    h = p.fwd.step(x[i], h, T(mask[i] ? 1 : 0));
    hf[i] = h;
  }
  h = Tensor<T>({1, p.d_h});
  for (int i = len - 1; i >= 0; --i) {
    h = p.bwd.step(x[i], h, T(mask[i] ? 1 : 0));
    hb[i] = h;
  }
  std::vector<Tensor<T>> rows(len);
  for (int i = 0; i < len; ++i) rows[i] = concat_cols(hf[i], hb[i]);
  return concat_rows(rows);
}

// u_i = sum_j A_ij h_j + h_i with A the row softmax of q_i . k_j / sqrt(d_k)
// over unmasked key positions only.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& h, const std::vector<char>& mask, const TextEncoderParams<T>& p) {
  int len = h.rows();
  if (static_cast<int>(mask.size()) != len)
    throw std::invalid_argument("self_attention: mask length " + std::to_string(mask.size()) + " vs " +
                                std::to_string(len) + " positions");
  bool any = false;
  for (char m : mask) any |= (m != 0);
  if (!any) throw std::invalid_argument("self_attention: every position is masked");
  Tensor<T> q = matmul(h, p.wq);
  Tensor<T> k = matmul(h, p.wk);
  Tensor<T> logits = scale(matmul(q, transpose(k)), T(1.0 / std::sqrt(static_cast<double>(p.d_k))));
  Tensor<T> key_bias({1, len});
  for (int j = 0; j < len; ++j) key_bias.values()[j] = mask[j] ? T(0) : T(-1e30);
  Tensor<T> a = softmax_rows(add(logits, key_bias));
  return add(matmul(a, h), h);
}

// Mean over unmasked rows; a fully masked input pools to the zero vector.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& u, const std::vector<char>& mask) {
  int len = u.rows();
  if (static_cast<int>(mask.size()) != len)
    throw std::invalid_argument("mean_pool: mask length " + std::to_string(mask.size()) + " vs " +
                                std::to_string(len) + " rows");
  int real = 0;
  for (char m : mask) real += (m != 0);
  if (real == 0) return Tensor<T>({1, u.cols()});
  Tensor<T> w({1, len});
  for (int i = 0; i < len; ++i) w.values()[i] = mask[i] ? T(1) / T(real) : T(0);
  return matmul(w, u);
}

template <typename T>
struct EncoderOutput {
  Tensor<T> pooled;        // 1 x 2 d_h
  Tensor<T> per_position;  // L x 2 d_h, kept for diagnostics
};

template <typename T>
EncoderOutput<T> encode_sequence(const Tensor<T>& embedded, const std::vector<char>& mask,
                                 const TextEncoderParams<T>& p) {
  Tensor<T> states = bigru_forward(embedded, mask, p);
  Tensor<T> attended = self_attention(states, mask, p);
  return {mean_pool(attended, mask), attended};
}

}  // namespace sarc
