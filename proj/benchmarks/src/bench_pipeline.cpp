#include <benchmark/benchmark.h>

#include <random>

#include "adua/training.hpp"

namespace {

using namespace adua;

ModelConfig bench_model() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden_dim = 64;
  cfg.num_heads = 4;
  cfg.ffn_dim = 128;
  cfg.adapter_dim = 16;
  cfg.vocab_size = 2048;
  cfg.max_len = 32;
  cfg.num_classes = 2;
  return cfg;
}

TokenBatch bench_batch(const ModelConfig& cfg, std::size_t batch) {
  std::vector<std::vector<TokenId>> docs;
  std::mt19937_64 eng(7);
  std::uniform_int_distribution<TokenId> tok(kFirstWordId, cfg.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> len(8, static_cast<std::size_t>(cfg.max_len) - 1);
  for (std::size_t i = 0; i < batch; ++i) {
    std::vector<TokenId> doc(len(eng));
    for (TokenId& t : doc) t = tok(eng);
    docs.push_back(std::move(doc));
  }
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
  return make_batch(docs, idx, static_cast<std::size_t>(cfg.max_len));
}

void BM_EncoderForward(benchmark::State& state) {
  const ModelConfig cfg = bench_model();
  const ParameterStore<float> params = init_model<float>(cfg, 1);
  const TokenBatch batch = bench_batch(cfg, static_cast<std::size_t>(state.range(0)));
  Tape<float> tape(false);
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode(tape, params, batch.ids, batch.batch, batch.seq_len, cfg));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(4)->Arg(16);

void BM_MlmTrainStep(benchmark::State& state) {
  const ModelConfig cfg = bench_model();
  ParameterStore<float> params = init_model<float>(cfg, 1);
  params.set_trainable({ParamGroup::kAdapter, ParamGroup::kMlmHead});
  const TokenBatch batch = bench_batch(cfg, 16);
  const MlmBatch masked = mask_for_mlm(batch, 0.15, 11, cfg.vocab_size);
  AdamState<float> adam;
  for (auto _ : state) {
    Tape<float> tape;
    Tensor<float> hidden =
        encode(tape, params, masked.input_ids, masked.batch, masked.seq_len, cfg);
    Tensor<float> logits = mlm_logits(tape, params, hidden);
    Tensor<float> flat =
        reshape(tape, logits, {masked.batch * masked.seq_len,
                               static_cast<std::size_t>(cfg.vocab_size)});
    Tensor<float> loss = cross_entropy(tape, flat, masked.target_ids, masked.loss_mask);
    tape.backward(loss);
    clip_global_norm(params, 1.0);
    adam_step(params, adam, 1e-4);
    params.zero_grads();
  }
}
BENCHMARK(BM_MlmTrainStep);

}  // namespace
