#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "finite_diff.hpp"
#include "mgcd/autodiff.hpp"
#include "mgcd/linalg.hpp"
#include "mgcd/model.hpp"
#include "test_util.hpp"

using mgcd::DenseMatrix;
using mgcd::EncoderNodes;
using mgcd::EncoderParams;
using mgcd::NodeId;
using mgcd::SampleBatch;
using mgcd::Tape;

namespace {

SampleBatch random_batch(std::size_t b, std::size_t p, std::size_t d_in,
                         std::mt19937_64& rng) {
  SampleBatch batch;
  for (std::size_t i = 0; i < b; ++i)
    batch.patches.push_back(testutil::random_matrix(p, d_in, rng));
  batch.labels.assign(b, -1);
  batch.is_labeled.assign(b, 0);
  batch.is_known_class.assign(b, 0);
  return batch;
}

double row_norm(const DenseMatrix& m, std::size_t r) {
  double acc = 0.0;
  for (std::size_t c = 0; c < m.cols(); ++c) acc += m(r, c) * m(r, c);
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("init_encoder shapes, bounds, determinism") {
  const EncoderParams p = mgcd::init_encoder(6, 4, 3, 42);
  CHECK(p.embed_w.rows() == 6);
  CHECK(p.embed_w.cols() == 4);
  CHECK(p.wq.rows() == 4);
  CHECK(p.wk.same_shape(p.wq));
  CHECK(p.wv.same_shape(p.wq));
  CHECK(p.cls0.rows() == 1);
  CHECK(p.cls0.cols() == 4);
  CHECK(p.proj_w1.rows() == 4);
  CHECK(p.proj_w1.cols() == 8);  // d_hidden = 2 * d_model
  CHECK(p.proj_w2.rows() == 8);
  CHECK(p.proj_w2.cols() == 3);
  CHECK(p.d_in() == 6);
  CHECK(p.d_model() == 4);
  CHECK(p.d_hidden() == 8);
  CHECK(p.d_out() == 3);

  for (double v : p.embed_w.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(6.0));
  for (double v : p.wq.values()) CHECK(std::abs(v) <= 0.5);
  for (double v : p.proj_w2.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));

  const EncoderParams q = mgcd::init_encoder(6, 4, 3, 42);
  CHECK(p.embed_w.values() == q.embed_w.values());
  CHECK(p.proj_w2.values() == q.proj_w2.values());
  const EncoderParams r = mgcd::init_encoder(6, 4, 3, 43);
  CHECK(p.embed_w.values() != r.embed_w.values());

  CHECK_THROWS_AS(mgcd::init_encoder(0, 4, 3, 0), std::invalid_argument);
}

TEST_CASE("validate_batch rejections") {
  std::mt19937_64 rng = testutil::rng(1);
  SampleBatch ok = random_batch(3, 2, 5, rng);
  CHECK_NOTHROW(mgcd::validate_batch(ok));

  SampleBatch empty;
  CHECK_THROWS_AS(mgcd::validate_batch(empty), std::invalid_argument);

  SampleBatch ragged = ok;
  ragged.patches[1] = testutil::random_matrix(2, 4, rng);
  CHECK_THROWS_AS(mgcd::validate_batch(ragged), std::invalid_argument);

  SampleBatch short_meta = ok;
  short_meta.labels.pop_back();
  CHECK_THROWS_AS(mgcd::validate_batch(short_meta), std::invalid_argument);

  SampleBatch unlabeled_labeled = ok;
  unlabeled_labeled.is_labeled[0] = 1;  // label stays -1
  CHECK_THROWS_AS(mgcd::validate_batch(unlabeled_labeled), std::invalid_argument);
}

TEST_CASE("attend_pool with a single patch adds the value path to cls0") {
  std::mt19937_64 rng = testutil::rng(2);
  const EncoderParams params = mgcd::init_encoder(5, 4, 3, 7);
  Tape tape;
  const EncoderNodes nodes = mgcd::register_params(tape, params);
  const DenseMatrix vis_val = testutil::random_matrix(1, 4, rng);
  const NodeId vis = tape.input(vis_val);
  const NodeId cls = mgcd::attend_pool(tape, vis, nodes);

  const DenseMatrix expect =
      mgcd::add(mgcd::matmul(vis_val, params.wv), params.cls0);
  CHECK(testutil::max_abs_diff(tape.value(cls), expect) < 1e-12);
}

TEST_CASE("attend_pool on identical patches ignores the attention weights") {
  std::mt19937_64 rng = testutil::rng(3);
  const EncoderParams params = mgcd::init_encoder(5, 4, 3, 8);
  const DenseMatrix one_row = testutil::random_matrix(1, 4, rng);
  DenseMatrix vis_val(6, 4);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) vis_val(r, c) = one_row(0, c);

  Tape tape;
  const EncoderNodes nodes = mgcd::register_params(tape, params);
  const NodeId cls = mgcd::attend_pool(tape, tape.input(vis_val), nodes);
  const DenseMatrix expect =
      mgcd::add(mgcd::matmul(one_row, params.wv), params.cls0);
  CHECK(testutil::max_abs_diff(tape.value(cls), expect) < 1e-12);
}

TEST_CASE("attend_pool with zeroed wq averages the patch values uniformly") {
  std::mt19937_64 rng = testutil::rng(4);
  EncoderParams params = mgcd::init_encoder(5, 4, 3, 9);
  params.wq = DenseMatrix(4, 4);  // all scores collapse to zero
  const DenseMatrix vis_val = testutil::random_matrix(5, 4, rng);

  Tape tape;
  const EncoderNodes nodes = mgcd::register_params(tape, params);
  const NodeId cls = mgcd::attend_pool(tape, tape.input(vis_val), nodes);

  const DenseMatrix values = mgcd::matmul(vis_val, params.wv);
  DenseMatrix mean_value(1, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t r = 0; r < 5; ++r) mean_value(0, c) += values(r, c);
    mean_value(0, c) /= 5.0;
  }
  const DenseMatrix expect = mgcd::add(mean_value, params.cls0);
  CHECK(testutil::max_abs_diff(tape.value(cls), expect) < 1e-12);
}

TEST_CASE("encode produces unit rows and the declared shapes") {
  std::mt19937_64 rng = testutil::rng(5);
  const EncoderParams params = mgcd::init_encoder(7, 6, 4, 10);
  const SampleBatch batch = random_batch(5, 3, 7, rng);

  Tape tape;
  const EncoderNodes nodes = mgcd::register_params(tape, params);
  const mgcd::ClassTokenBatch out = mgcd::encode(tape, batch, nodes);
  const DenseMatrix& z = tape.value(out.z);
  const DenseMatrix& h = tape.value(out.h);
  REQUIRE(z.rows() == 5);
  REQUIRE(z.cols() == 4);
  REQUIRE(h.rows() == 5);
  REQUIRE(h.cols() == 6);
  for (std::size_t r = 0; r < z.rows(); ++r)
    CHECK(row_norm(z, r) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("encode maps duplicate samples to identical rows") {
  std::mt19937_64 rng = testutil::rng(6);
  const EncoderParams params = mgcd::init_encoder(5, 4, 3, 11);
  SampleBatch batch = random_batch(4, 3, 5, rng);
  batch.patches[2] = batch.patches[0];

  Tape tape;
  const EncoderNodes nodes = mgcd::register_params(tape, params);
  const mgcd::ClassTokenBatch out = mgcd::encode(tape, batch, nodes);
  const DenseMatrix& z = tape.value(out.z);
  for (std::size_t c = 0; c < z.cols(); ++c) CHECK(z(0, c) == z(2, c));
}

TEST_CASE("encode is invariant to patch order within a sample") {
  std::mt19937_64 rng = testutil::rng(7);
  const EncoderParams params = mgcd::init_encoder(6, 5, 4, 12);
  SampleBatch batch = random_batch(3, 4, 6, rng);

  Tape t1;
  const mgcd::ClassTokenBatch a = mgcd::encode(t1, batch, mgcd::register_params(t1, params));

  // reverse the patches of sample 1
  DenseMatrix reversed(4, 6);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) reversed(r, c) = batch.patches[1](3 - r, c);
  batch.patches[1] = reversed;

  Tape t2;
  const mgcd::ClassTokenBatch b = mgcd::encode(t2, batch, mgcd::register_params(t2, params));
  CHECK(testutil::max_abs_diff(t1.value(a.z), t2.value(b.z)) < 1e-10);
  CHECK(testutil::max_abs_diff(t1.value(a.h), t2.value(b.h)) < 1e-10);
}

TEST_CASE("encode is permutation-equivariant across samples") {
  std::mt19937_64 rng = testutil::rng(8);
  const EncoderParams params = mgcd::init_encoder(5, 4, 3, 13);
  const SampleBatch batch = random_batch(5, 2, 5, rng);

  Tape t1;
  const mgcd::ClassTokenBatch a = mgcd::encode(t1, batch, mgcd::register_params(t1, params));

  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  SampleBatch shuffled;
  for (std::size_t i : perm) {
    shuffled.patches.push_back(batch.patches[i]);
    shuffled.labels.push_back(batch.labels[i]);
    shuffled.is_labeled.push_back(batch.is_labeled[i]);
    shuffled.is_known_class.push_back(batch.is_known_class[i]);
  }
  Tape t2;
  const mgcd::ClassTokenBatch b = mgcd::encode(t2, shuffled, mgcd::register_params(t2, params));

  const DenseMatrix& za = t1.value(a.z);
  const DenseMatrix& zb = t2.value(b.z);
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < za.cols(); ++c) CHECK(zb(r, c) == za(perm[r], c));
}

TEST_CASE("encoder gradients match finite differences") {
  std::mt19937_64 rng = testutil::rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const EncoderParams params = mgcd::init_encoder(3, 4, 3, 100 + static_cast<unsigned>(rep));
    const SampleBatch batch = random_batch(3, 2, 3, rng);
    const DenseMatrix weights = testutil::random_matrix(3, 3, rng);

    const testutil::GraphBuilder build = [&](Tape& tape,
                                             const std::vector<NodeId>& inputs) {
      EncoderNodes nodes;
      nodes.embed_w = inputs[0];
      nodes.wq = inputs[1];
      nodes.wk = inputs[2];
      nodes.wv = inputs[3];
      nodes.cls0 = inputs[4];
      nodes.proj_w1 = inputs[5];
      nodes.proj_w2 = inputs[6];
      const mgcd::ClassTokenBatch out = mgcd::encode(tape, batch, nodes);
      return tape.sum(tape.elem_mul(out.z, tape.input(weights)));
    };
    const testutil::GradCheck check = testutil::check_gradients(
        build, {params.embed_w, params.wq, params.wk, params.wv, params.cls0,
                params.proj_w1, params.proj_w2});
    CHECK_MESSAGE(check.ok, check.detail);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  namespace fs = std::filesystem;
  const EncoderParams params = mgcd::init_encoder(6, 5, 4, 77);
  const fs::path dir = fs::temp_directory_path() / "mgcd_ckpt_test";
  fs::remove_all(dir);
  mgcd::save_checkpoint(params, dir.string());
  const EncoderParams loaded = mgcd::load_checkpoint(dir.string());
  CHECK(loaded.embed_w.values() == params.embed_w.values());
  CHECK(loaded.wq.values() == params.wq.values());
  CHECK(loaded.wk.values() == params.wk.values());
  CHECK(loaded.wv.values() == params.wv.values());
  CHECK(loaded.cls0.values() == params.cls0.values());
  CHECK(loaded.proj_w1.values() == params.proj_w1.values());
  CHECK(loaded.proj_w2.values() == params.proj_w2.values());
  fs::remove_all(dir);
}

TEST_CASE("checkpoint load failure modes") {
  namespace fs = std::filesystem;
  CHECK_THROWS_AS(mgcd::load_checkpoint("/nonexistent/mgcd"), std::runtime_error);

  const EncoderParams params = mgcd::init_encoder(4, 3, 2, 5);
  const fs::path dir = fs::temp_directory_path() / "mgcd_ckpt_broken";
  fs::remove_all(dir);
  mgcd::save_checkpoint(params, dir.string());
  // truncate one matrix file: the error must name the offending row
  std::ofstream(dir / "wq.csv") << "0.5,0.5,0.5\n0.5,0.5\n";
  try {
    mgcd::load_checkpoint(dir.string());
    FAIL("expected a row-shape error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("row") != std::string::npos);
  }
  fs::remove_all(dir);
}
