#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "mvss/checkpoint.hpp"
#include "mvss/error.hpp"
#include "mvss/gradcheck.hpp"
#include "mvss/network.hpp"
#include "mvss/ops.hpp"
#include "mvss/rng.hpp"
#include "mvss/tensor.hpp"

using namespace mvss;
namespace fs = std::filesystem;

namespace {

Tensor rand_image(Shape s, Rng& rng) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

net::ModelConfig small_config(net::HeadKind head = net::HeadKind::ConvGem) {
  net::ModelConfig cfg;
  cfg.k = 16;
  cfg.edge_channels = 8;
  cfg.head = head;
  cfg.schedule = {0.99, 2.0, 12};
  cfg.seed = 5;
  return cfg;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

std::string temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("mvss_net_test_" + std::to_string(++counter));
  fs::create_directories(p);
  return p.string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<char>(std::istreambuf_iterator<char>(f),
                           std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("backbone stage widths and strides") {
  Rng rng(3);
  net::Backbone bb(64, rng);
  Tensor x = rand_image({1, 3, 64, 64}, rng);
  std::vector<Tensor> stages = bb.forward(x, ops::Mode::Train);
  REQUIRE(stages.size() == 4);
  CHECK(stages[0].shape() == Shape{1, 16, 16, 16});
  CHECK(stages[1].shape() == Shape{1, 32, 8, 8});
  CHECK(stages[2].shape() == Shape{1, 64, 4, 4});
  CHECK(stages[3].shape() == Shape{1, 64, 4, 4});

  CHECK_THROWS_AS(net::Backbone(2, rng), ConfigError);
}

TEST_CASE("esb forward shapes and edge range") {
  Rng rng(7);
  net::MvssModel model(small_config());
  Tensor x = rand_image({1, 3, 64, 64}, rng);
  net::EsbBranch::Output out = model.esb.forward(x, ops::Mode::Train);
  CHECK(out.features.shape() == Shape{1, 16, 4, 4});
  CHECK(out.edge.shape() == Shape{1, 1, 16, 16});
  for (double v : out.edge.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("esb with zeroed erb convs still yields a finite edge map") {
  net::MvssModel model(small_config());
  auto zero_erb = [](layers::Erb& erb) {
    for (double& v : erb.conv1.weight.value.data()) v = 0.0;
    for (double& v : erb.conv2.weight.value.data()) v = 0.0;
    for (double& v : erb.conv2.bias.value.data()) v = 0.0;
    if (erb.has_proj) {
      for (double& v : erb.proj.weight.value.data()) v = 0.0;
    }
  };
  for (auto& erb : model.esb.erbs) zero_erb(erb);
  for (auto& erb : model.esb.combiners) zero_erb(erb);
  zero_erb(model.esb.head_erb);

  Rng rng(11);
  Tensor x = rand_image({1, 3, 32, 32}, rng);
  net::EsbBranch::Output a = model.esb.forward(x, ops::Mode::Eval);
  net::EsbBranch::Output b = model.esb.forward(x, ops::Mode::Eval);
  CHECK(all_finite(a.edge));
  CHECK(bit_equal(a.edge, b.edge));
  // with every path zeroed (head projection included) the edge logit is 0
  for (double v : a.edge.data()) CHECK(v == 0.5);
}

TEST_CASE("nsb forward shape and constant-offset invariance") {
  Rng rng(13);
  net::MvssModel model(small_config());
  Tensor x = rand_image({1, 3, 64, 64}, rng);
  for (double& v : x.data()) v = 0.2 + 0.5 * v;  // leave room for the offset
  Tensor shifted = x.clone();
  for (double& v : shifted.data()) v += 0.1;

  Tensor fa = model.nsb.forward(x, ops::Mode::Eval);
  Tensor fb = model.nsb.forward(shifted, ops::Mode::Eval);
  CHECK(fa.shape() == Shape{1, 16, 4, 4});
  double worst = 0.0;
  for (std::int64_t i = 0; i < fa.numel(); ++i) {
    worst = std::max(worst, std::fabs(fa.data()[i] - fb.data()[i]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("gradient reaches the bayar weights") {
  Rng rng(17);
  net::MvssModel model(small_config());
  Tensor x = rand_image({1, 3, 32, 32}, rng);
  Tensor out = model.nsb.forward(x, ops::Mode::Train);
  Tensor loss = ops::reduce(ops::mul(out, out), ops::Reduce::Sum, ops::Axes::all());
  Tape::active().backward(loss);
  double norm = 0.0;
  for (double g : model.nsb.bayar.weight.value.grad()) norm += g * g;
  CHECK(norm > 0.0);
  Tape::active().clear();
}

TEST_CASE("fuse_and_segment contract") {
  Rng rng(19);
  net::MvssModel model(small_config());
  Tensor fe = rand_image({1, 16, 4, 4}, rng);
  Tensor fn = rand_image({1, 16, 4, 4}, rng);
  net::MvssModel::Fused fused = model.fuse_and_segment(fe, fn, 64, 64);
  CHECK(fused.s_prime.shape() == Shape{1, 1, 4, 4});
  CHECK(fused.seg.shape() == Shape{1, 1, 64, 64});
  for (double v : fused.seg.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // seg is exactly sigmoid(upsample(s_prime))
  Tensor expect = ops::sigmoid(ops::bilinear_resize(fused.s_prime, 64, 64));
  double worst = 0.0;
  for (std::int64_t i = 0; i < expect.numel(); ++i) {
    worst = std::max(worst, std::fabs(expect.data()[i] - fused.seg.data()[i]));
  }
  CHECK(worst <= 1e-12);

  Tensor narrow = rand_image({1, 16, 8, 8}, rng);
  CHECK_THROWS_AS(model.fuse_and_segment(fe, narrow, 64, 64), DimensionError);
}

TEST_CASE("predict shape contract across sizes and batch") {
  Rng rng(23);
  net::MvssModel model(small_config());
  for (int hw : {32, 64}) {
    Tensor x = rand_image({2, 3, hw, hw}, rng);
    net::Prediction pred = model.predict(x, 0, ops::Mode::Eval);
    CHECK(pred.seg.shape() == Shape{2, 1, hw, hw});
    CHECK(pred.edge.shape() == Shape{2, 1, hw / 4, hw / 4});
    CHECK(pred.score.shape() == Shape{2, 1, 1, 1});
    for (double v : pred.seg.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (double v : pred.score.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  // a non-square size exercises the h/w bookkeeping
  Tensor rect = rand_image({1, 3, 32, 64}, rng);
  net::Prediction pred = model.predict(rect, 0, ops::Mode::Eval);
  CHECK(pred.seg.shape() == Shape{1, 1, 32, 64});
  CHECK(pred.edge.shape() == Shape{1, 1, 8, 16});
}

TEST_CASE("predict input validation") {
  Rng rng(29);
  net::MvssModel model(small_config());
  CHECK_THROWS_AS(model.predict(rand_image({1, 1, 64, 64}, rng), 0, ops::Mode::Eval),
                  DimensionError);
  CHECK_THROWS_AS(model.predict(rand_image({1, 3, 60, 64}, rng), 0, ops::Mode::Eval),
                  DimensionError);
  Tensor bad = rand_image({1, 3, 32, 32}, rng);
  bad.data()[7] = 1.5;
  CHECK_THROWS_AS(model.predict(bad, 0, ops::Mode::Eval), DomainError);
}

TEST_CASE("eval-mode predict is deterministic") {
  Rng rng(31);
  net::MvssModel model(small_config());
  Tensor x = rand_image({1, 3, 32, 32}, rng);
  net::Prediction a = model.predict(x, 0, ops::Mode::Eval);
  net::Prediction b = model.predict(x, 0, ops::Mode::Eval);
  CHECK(bit_equal(a.seg, b.seg));
  CHECK(bit_equal(a.edge, b.edge));
  CHECK(bit_equal(a.score, b.score));
}

TEST_CASE("gmp ablation scores the max segmentation pixel") {
  Rng rng(37);
  net::MvssModel model(small_config(net::HeadKind::Gmp));
  Tensor x = rand_image({2, 3, 32, 32}, rng);
  net::Prediction pred = model.predict(x, 0, ops::Mode::Eval);
  for (int n = 0; n < 2; ++n) {
    double mx = 0.0;
    for (int h = 0; h < 32; ++h)
      for (int w = 0; w < 32; ++w) mx = std::max(mx, pred.seg.at(n, 0, h, w));
    CHECK(pred.score.at(n, 0, 0, 0) == mx);
  }
}

TEST_CASE("identical seeds build identical models, heads share the trunk") {
  net::ModelConfig cfg = small_config(net::HeadKind::ConvGem);
  net::MvssModel a(cfg);
  net::MvssModel b(cfg);
  CHECK(bit_equal(a.nsb.bayar.weight.value, b.nsb.bayar.weight.value));
  CHECK(bit_equal(a.da.query.weight.value, b.da.query.weight.value));

  // head choice must not perturb trunk initialization
  net::MvssModel c(small_config(net::HeadKind::Gmp));
  CHECK(bit_equal(a.nsb.bayar.weight.value, c.nsb.bayar.weight.value));
  CHECK(bit_equal(a.esb.backbone.stages[0].conv1.weight.value,
                  c.esb.backbone.stages[0].conv1.weight.value));
  CHECK(bit_equal(a.da.out_conv.weight.value, c.da.out_conv.weight.value));

  net::ModelConfig other = cfg;
  other.seed = 6;
  net::MvssModel d(other);
  CHECK_FALSE(bit_equal(a.nsb.bayar.weight.value, d.nsb.bayar.weight.value));
}

TEST_CASE("parameter enumeration is stable, unique and complete") {
  net::MvssModel model(small_config());
  nn::ParamRegistry reg1 = model.named_params();
  nn::ParamRegistry reg2 = model.named_params();
  REQUIRE(reg1.params.size() == reg2.params.size());

  std::set<std::string> names;
  std::set<const Parameter*> pointers;
  for (std::size_t i = 0; i < reg1.params.size(); ++i) {
    CHECK(reg1.params[i].name == reg2.params[i].name);
    CHECK(reg1.params[i].param == reg2.params[i].param);
    names.insert(reg1.params[i].name);
    pointers.insert(reg1.params[i].param);
    CHECK(reg1.params[i].param->value.defined());
  }
  CHECK(names.size() == reg1.params.size());     // no duplicate names
  CHECK(pointers.size() == reg1.params.size());  // no parameter listed twice

  CHECK(names.count("nsb.bayar.weight") == 1);
  CHECK(names.count("da.gamma_pa") == 1);
  CHECK(names.count("clf.p") == 1);
  CHECK(names.count("esb.backbone.s1.conv1.weight") == 1);

  // the gmp ablation has no head parameters at all
  net::MvssModel gmp(small_config(net::HeadKind::Gmp));
  for (const auto& np : gmp.named_params().params) {
    CHECK(np.name.rfind("clf", 0) != 0);
  }
}

TEST_CASE("head kind string round trip") {
  for (auto kind : {net::HeadKind::Gmp, net::HeadKind::Gem, net::HeadKind::ConvGem}) {
    CHECK(net::head_kind_from_string(net::head_kind_to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(net::head_kind_from_string("fancy"), ConfigError);
}

TEST_CASE("end-to-end gradients on a reduced model") {
  Rng rng(41);
  net::ModelConfig cfg;
  cfg.k = 8;
  cfg.edge_channels = 4;
  cfg.head = net::HeadKind::ConvGem;
  cfg.schedule = {0.99, 2.0, 6};
  cfg.seed = 9;
  net::MvssModel model(cfg);

  // batch of two: the deepest stage is 1x1, so a lone sample would leave
  // batch norm without a second value per channel
  Tensor x = rand_image({2, 3, 16, 16}, rng);

  // scalarize the full prediction and check a handful of parameters; the
  // exhaustive sweep lives in the acceptance suite
  nn::ParamRegistry reg = model.named_params();
  std::vector<Tensor> subset;
  for (const char* name : {"esb.erb1.conv1.weight", "nsb.backbone.s4.conv2.weight",
                           "da.out.weight", "clf.p", "da.gamma_pa"}) {
    bool found = false;
    for (const auto& np : reg.params) {
      if (np.name == name) {
        subset.push_back(np.param->value);
        found = true;
      }
    }
    INFO("parameter " << name);
    REQUIRE(found);
  }

  auto fn = [&model, &x](const std::vector<Tensor>&) {
    net::Prediction pred = model.predict(x, 3, ops::Mode::Train);
    Tensor total = ops::add(
        ops::reduce(pred.seg, ops::Reduce::Mean, ops::Axes::all()),
        ops::reduce(pred.edge, ops::Reduce::Mean, ops::Axes::all()));
    return ops::add(total, ops::reduce(pred.score, ops::Reduce::Mean, ops::Axes::all()));
  };
  GradCheckResult r = grad_check(fn, subset, 1e-4);
  INFO("worst input " << r.worst_input << " idx " << r.worst_index << " analytic "
                      << r.analytic << " numeric " << r.numeric);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("checkpoint round trip preserves eval outputs and config") {
  Rng rng(43);
  net::ModelConfig cfg = small_config();
  net::MvssModel model(cfg);
  Tensor x = rand_image({1, 3, 32, 32}, rng);
  net::Prediction before = model.predict(x, 0, ops::Mode::Eval);

  const std::string dir = temp_dir();
  const std::string path = dir + "/model.bin";
  net::save_checkpoint(path, model, 7);

  net::LoadedModel loaded = net::load_checkpoint(path);
  CHECK(loaded.trained_epochs == 7);
  CHECK(loaded.model->config().k == cfg.k);
  CHECK(loaded.model->config().edge_channels == cfg.edge_channels);
  CHECK(loaded.model->config().head == cfg.head);
  CHECK(loaded.model->config().schedule.total_epochs == cfg.schedule.total_epochs);
  CHECK(loaded.model->config().seed == cfg.seed);

  net::Prediction after = loaded.model->predict(x, 0, ops::Mode::Eval);
  CHECK(bit_equal(before.seg, after.seg));
  CHECK(bit_equal(before.edge, after.edge));
  CHECK(bit_equal(before.score, after.score));

  // saving the same model twice is byte-identical
  const std::string path2 = dir + "/model2.bin";
  net::save_checkpoint(path2, model, 7);
  CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint loader rejects malformed files") {
  Rng rng(47);
  net::MvssModel model(small_config());
  const std::string dir = temp_dir();
  const std::string path = dir + "/model.bin";
  net::save_checkpoint(path, model, 3);
  const std::vector<char> good = slurp(path);

  CHECK_THROWS_AS(net::load_checkpoint(dir + "/absent.bin"), IoError);

  // bad magic
  std::vector<char> bad = good;
  bad[0] = 'X';
  spit(dir + "/magic.bin", bad);
  CHECK_THROWS_AS(net::load_checkpoint(dir + "/magic.bin"), ParseError);

  // truncation at several depths
  for (std::size_t keep : {std::size_t{4}, std::size_t{20}, good.size() / 2,
                           good.size() - 3}) {
    std::vector<char> cut(good.begin(), good.begin() + static_cast<long>(keep));
    spit(dir + "/cut.bin", cut);
    CHECK_THROWS_AS(net::load_checkpoint(dir + "/cut.bin"), ParseError);
  }

  // trailing garbage
  std::vector<char> extra = good;
  extra.push_back('\0');
  spit(dir + "/extra.bin", extra);
  CHECK_THROWS_AS(net::load_checkpoint(dir + "/extra.bin"), ParseError);

  // flip one character inside the first entry name: the rebuilt model's
  // enumeration no longer matches
  std::vector<char> renamed = good;
  bool flipped = false;
  for (std::size_t i = 0; i + 3 < renamed.size() && !flipped; ++i) {
    if (renamed[i] == 'e' && renamed[i + 1] == 's' && renamed[i + 2] == 'b') {
      renamed[i] = 'x';
      flipped = true;
    }
  }
  REQUIRE(flipped);
  spit(dir + "/rename.bin", renamed);
  CHECK_THROWS_AS(net::load_checkpoint(dir + "/rename.bin"), IntegrityError);
}
