// microbenchmarks for the hot paths: spectral kernels, loss graphs with their
// backward sweeps, clustering, and the encoder forward. shapes mirror the
// default training configuration (B = 48, D = 32, 20 classes).

#include <benchmark/benchmark.h>

#include <random>

#include "mgcd/autodiff.hpp"
#include "mgcd/cluster.hpp"
#include "mgcd/data.hpp"
#include "mgcd/linalg.hpp"
#include "mgcd/losses.hpp"
#include "mgcd/model.hpp"
#include "mgcd/spectral.hpp"

namespace {

mgcd::DenseMatrix unit_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  mgcd::DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      m(i, j) = gauss(gen);
      norm2 += m(i, j) * m(i, j);
    }
    const double norm = std::sqrt(norm2);
    for (std::size_t j = 0; j < cols; ++j) m(i, j) /= norm;
  }
  return m;
}

void BM_Svd(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const mgcd::DenseMatrix a = unit_rows(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(mgcd::svd(a));
}
BENCHMARK(BM_Svd)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_NuclearNorm(benchmark::State& state) {
  const mgcd::DenseMatrix z = unit_rows(256, 32, 2);
  for (auto _ : state) benchmark::DoNotOptimize(mgcd::nuclear_norm(z));
}
BENCHMARK(BM_NuclearNorm);

void BM_SpectralReport(benchmark::State& state) {
  const mgcd::DenseMatrix z = unit_rows(240, 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(mgcd::spectral_report(z));
}
BENCHMARK(BM_SpectralReport);

void BM_GcdLossBackward(benchmark::State& state) {
  const std::size_t b = 48, d = 32;
  const mgcd::DenseMatrix z = unit_rows(b, d, 4), zp = unit_rows(b, d, 5);
  std::vector<int> labels(b);
  std::vector<std::uint8_t> mask(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    labels[i] = static_cast<int>(i % 10);
    mask[i] = i % 2 == 0;
  }
  mgcd::LossConfig cfg;
  for (auto _ : state) {
    mgcd::Tape tape;
    const mgcd::NodeId zn = tape.input(z), zpn = tape.input(zp);
    const mgcd::NodeId loss = mgcd::gcd_loss(tape, zn, zpn, labels, mask, cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(zn));
  }
}
BENCHMARK(BM_GcdLossBackward);

void BM_MtmcLossBackward(benchmark::State& state) {
  const mgcd::DenseMatrix z = unit_rows(24, 32, 6);
  mgcd::LossConfig cfg;
  for (auto _ : state) {
    mgcd::Tape tape;
    const mgcd::NodeId zn = tape.input(z);
    const mgcd::NodeId loss = mgcd::mtmc_loss(tape, zn, cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(zn));
  }
}
BENCHMARK(BM_MtmcLossBackward);

void BM_SimgcdLossBackward(benchmark::State& state) {
  const std::size_t b = 48, dm = 16, k = 20;
  const mgcd::DenseMatrix h = unit_rows(b, dm, 7), hp = unit_rows(b, dm, 8);
  const mgcd::PrototypeBank bank = mgcd::init_prototypes(k, dm, 9);
  std::vector<int> labels(b);
  std::vector<std::uint8_t> mask(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    labels[i] = static_cast<int>(i % 10);
    mask[i] = i % 2 == 0;
  }
  mgcd::LossConfig cfg;
  for (auto _ : state) {
    mgcd::Tape tape;
    const mgcd::NodeId hn = tape.input(h), hpn = tape.input(hp);
    const mgcd::NodeId cn = tape.input(bank.c);
    const mgcd::NodeId loss =
        mgcd::simgcd_losses(tape, hn, hpn, labels, mask, cn, cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(cn));
  }
}
BENCHMARK(BM_SimgcdLossBackward);

void BM_MeanShift(benchmark::State& state) {
  const mgcd::DenseMatrix z = unit_rows(48, 32, 10);
  for (auto _ : state) benchmark::DoNotOptimize(mgcd::cms_mean_shift(z, 4));
}
BENCHMARK(BM_MeanShift);

void BM_SsKmeans(benchmark::State& state) {
  const mgcd::DenseMatrix z = unit_rows(240, 32, 11);
  std::vector<std::size_t> labeled_idx;
  std::vector<int> labels;
  for (std::size_t i = 0; i < 60; ++i) {
    labeled_idx.push_back(i);
    labels.push_back(static_cast<int>(i % 10));
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(mgcd::ss_kmeans(z, labeled_idx, labels, 20, 300, 12));
}
BENCHMARK(BM_SsKmeans);

void BM_EncodeBatch(benchmark::State& state) {
  mgcd::SynthConfig synth;
  synth.samples_per_class = 3;  // 60 samples, one default batch per draw
  const mgcd::Dataset ds = mgcd::gen_synthetic(synth);
  std::vector<std::size_t> ids(48);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  const mgcd::SampleBatch batch = mgcd::draw_view(ds, ids, 13);
  const mgcd::EncoderParams params = mgcd::init_encoder(synth.input_dim, 16, 32, 14);
  for (auto _ : state) {
    mgcd::Tape tape;
    const mgcd::EncoderNodes nodes = mgcd::register_params(tape, params);
    const mgcd::ClassTokenBatch tokens = mgcd::encode(tape, batch, nodes);
    benchmark::DoNotOptimize(tape.value(tokens.z));
  }
}
BENCHMARK(BM_EncodeBatch);

}  // namespace

BENCHMARK_MAIN();
