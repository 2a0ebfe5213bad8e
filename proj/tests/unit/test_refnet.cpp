#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "histo/refnet.hpp"

using namespace histo;
using namespace histo::refnet;

namespace {

CnnArchitecture tiny_arch(int side = 17, int c1 = 1, int c2 = 1, int c3 = 1, int fc = 2) {
  return CnnArchitecture{side, c1, c2, c3, fc};
}

std::vector<double> random_input(int side, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(3) * side * side);
  for (auto& x : v) x = u(rng);
  return v;
}

void randomize_biases(CnnParameters& p, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  p.for_each_tensor([&](const char*, std::vector<double>& v, int, bool bias) {
    if (bias) {
      for (auto& x : v) x = u(rng);
    }
  });
}

Patch constant_patch(std::array<std::uint8_t, 3> rgb, int side, const std::string& id, int idx) {
  return Patch{id, idx, RasterImage(side, side, rgb), 0, 0, 0};
}

// Straight-line evaluation of the tiny single-channel network on plain
// arrays: conv/relu/pool written as explicit loops over the definition.
std::array<double, 4> oracle_logits(const CnnParameters& p, const std::vector<double>& in, int side) {
  auto px = [&](int c, int y, int x) { return in[(c * side + y) * side + x]; };
  const int n1 = side - 1;
  std::vector<std::vector<double>> a1(n1, std::vector<double>(n1));
  for (int y = 0; y < n1; ++y) {
    for (int x = 0; x < n1; ++x) {
      double s = p.conv1.b[0];
      for (int c = 0; c < 3; ++c) {
        for (int ky = 0; ky < 2; ++ky) {
          for (int kx = 0; kx < 2; ++kx) s += p.conv1.w[(c * 2 + ky) * 2 + kx] * px(c, y + ky, x + kx);
        }
      }
      a1[y][x] = std::max(0.0, s);
    }
  }
  const int n2 = n1 / 2;
  std::vector<std::vector<double>> p1(n2, std::vector<double>(n2));
  for (int y = 0; y < n2; ++y) {
    for (int x = 0; x < n2; ++x) {
      p1[y][x] = std::max({a1[2 * y][2 * x], a1[2 * y][2 * x + 1], a1[2 * y + 1][2 * x], a1[2 * y + 1][2 * x + 1]});
    }
  }
  const int n3 = n2 - 1;
  std::vector<std::vector<double>> a2(n3, std::vector<double>(n3));
  for (int y = 0; y < n3; ++y) {
    for (int x = 0; x < n3; ++x) {
      double s = p.conv2.b[0];
      for (int ky = 0; ky < 2; ++ky) {
        for (int kx = 0; kx < 2; ++kx) s += p.conv2.w[ky * 2 + kx] * p1[y + ky][x + kx];
      }
      a2[y][x] = std::max(0.0, s);
    }
  }
  const int n4 = n3 - 3;
  std::vector<std::vector<double>> a3(n4, std::vector<double>(n4));
  for (int y = 0; y < n4; ++y) {
    for (int x = 0; x < n4; ++x) {
      double s = p.conv3.b[0];
      for (int ky = 0; ky < 4; ++ky) {
        for (int kx = 0; kx < 4; ++kx) s += p.conv3.w[ky * 4 + kx] * a2[y + ky][x + kx];
      }
      a3[y][x] = std::max(0.0, s);
    }
  }
  const int n5 = n4 / 4;
  std::vector<double> flat;
  for (int y = 0; y < n5; ++y) {
    for (int x = 0; x < n5; ++x) {
      double m = a3[4 * y][4 * x];
      for (int dy = 0; dy < 4; ++dy) {
        for (int dx = 0; dx < 4; ++dx) m = std::max(m, a3[4 * y + dy][4 * x + dx]);
      }
      flat.push_back(m);
    }
  }
  std::vector<double> h(p.fc1.out);
  for (int o = 0; o < p.fc1.out; ++o) {
    double s = p.fc1.b[o];
    for (std::size_t i = 0; i < flat.size(); ++i) s += p.fc1.w[o * flat.size() + i] * flat[i];
    h[o] = std::max(0.0, s);
  }
  std::array<double, 4> logits{};
  for (int o = 0; o < 4; ++o) {
    double s = p.fc2.b[o];
    for (int i = 0; i < p.fc2.in; ++i) s += p.fc2.w[o * p.fc2.in + i] * h[i];
    logits[o] = s;
  }
  return logits;
}

double batch_loss(const CnnParameters& p, const std::vector<Sample>& batch) {
  double total = 0.0;
  for (const auto& s : batch) {
    total += cross_entropy(forward(p, s.input).logits, index_of(s.label));
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST(Architecture, LayerShapesFollowInputSide) {
  const auto s = CnnArchitecture{}.shapes();
  EXPECT_EQ(s.conv1, (Shape3{16, 255, 255}));
  EXPECT_EQ(s.pool1, (Shape3{16, 127, 127}));
  EXPECT_EQ(s.conv2, (Shape3{32, 126, 126}));
  EXPECT_EQ(s.conv3, (Shape3{64, 123, 123}));
  EXPECT_EQ(s.pool2, (Shape3{64, 30, 30}));
  EXPECT_EQ(s.flat, 57600);
  EXPECT_EQ(s.hidden, 512);
  EXPECT_EQ(CnnArchitecture{32}.shapes().flat, 2 * 2 * 64);
  EXPECT_EQ(tiny_arch(17).shapes().flat, 1);
}

TEST(Architecture, TooSmallInputIsRejected) {
  EXPECT_THROW(tiny_arch(16).shapes(), Error);
  EXPECT_THROW(tiny_arch(8).shapes(), Error);
  EXPECT_THROW(tiny_arch(17, 0).shapes(), Error);
}

TEST(InitParams, DeterministicWithZeroBiases) {
  const auto arch = tiny_arch(20, 3, 4, 5, 6);
  const auto a = init_params(arch, 11);
  const auto b = init_params(arch, 11);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(arch, 12));
  a.for_each_tensor([](const char*, const std::vector<double>& v, int, bool bias) {
    if (!bias) return;
    for (double x : v) EXPECT_EQ(x, 0.0);
  });
}

TEST(InitParams, FirstLayerStddevMatchesHeScale) {
  const auto p = init_params(tiny_arch(17, 1000, 1, 1, 1), 3);
  ASSERT_GE(p.conv1.w.size(), 10000u);
  double mean = 0.0;
  for (double x : p.conv1.w) mean += x;
  mean /= static_cast<double>(p.conv1.w.size());
  double var = 0.0;
  for (double x : p.conv1.w) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(p.conv1.w.size() - 1));
  EXPECT_NEAR(sd, std::sqrt(1.0 / 6.0), 0.05 * std::sqrt(1.0 / 6.0));
}

TEST(Forward, ZeroParametersGiveUniformOutput) {
  const auto p = CnnParameters::zeros(CnnArchitecture{20, 2, 2, 2, 3});
  std::mt19937 rng(1);
  const auto a = forward(p, random_input(20, rng));
  for (double v : a.probs) EXPECT_EQ(v, 0.25);
}

TEST(Forward, ProbabilitiesSumToOne) {
  std::mt19937 rng(2);
  for (int t = 0; t < 10; ++t) {
    auto p = init_params(tiny_arch(24, 3, 4, 5, 8), static_cast<std::uint64_t>(t));
    randomize_biases(p, rng);
    const auto a = forward(p, random_input(24, rng));
    double sum = 0.0;
    for (double v : a.probs) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Forward, RejectsWrongInputSize) {
  const auto p = CnnParameters::zeros(tiny_arch());
  EXPECT_THROW(forward(p, std::vector<double>(10)), Error);
}

TEST(Forward, TinyNetLogitsMatchScalarOracleExactly) {
  // Dyadic weights and inputs keep every intermediate sum exact, so the
  // comparison holds bit for bit regardless of summation order.
  const int side = 17;
  auto p = CnnParameters::zeros(tiny_arch(side, 1, 1, 1, 2));
  int k = 0;
  p.for_each_tensor([&](const char*, std::vector<double>& v, int, bool bias) {
    for (auto& x : v) {
      x = bias ? 0.5 - 0.125 * (k % 3) : static_cast<double>((k * 7 + 3) % 9 - 3) / 4.0;
      ++k;
    }
  });
  std::vector<double> in(3 * side * side);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<double>((i * 5 + 1) % 17) / 16.0;

  const auto expected = oracle_logits(p, in, side);
  const auto a = forward(p, in);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(a.logits[c], expected[c]) << c;
  EXPECT_NE(expected[0], expected[1]);  // the probe exercises a live path
  EXPECT_GT(a.h[0] + a.h[1], 0.0);
}

TEST(LossAndGrad, UniformPredictionsGiveLnFour) {
  const auto p = CnnParameters::zeros(tiny_arch(18, 2, 2, 2, 2));
  std::mt19937 rng(3);
  std::vector<Sample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({random_input(18, rng), label_at(i)});
  EXPECT_NEAR(loss_and_grad(p, batch).loss, std::log(4.0), 1e-9);
  EXPECT_THROW(loss_and_grad(p, std::vector<Sample>{}), Error);
}

TEST(LossAndGrad, DeadReluPathHasExactlyZeroGradient) {
  std::mt19937 rng(4);
  auto p = init_params(tiny_arch(19, 2, 3, 3, 4), 5);
  p.fc1.b[1] = -1e6;  // hidden unit 1 never fires
  std::vector<Sample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({random_input(19, rng), label_at(i)});
  const auto g = loss_and_grad(p, batch).grad;
  for (int i = 0; i < g.fc1.in; ++i) EXPECT_EQ(g.fc1.w[static_cast<std::size_t>(g.fc1.in) + i], 0.0);
  EXPECT_EQ(g.fc1.b[1], 0.0);
  for (int o = 0; o < 4; ++o) EXPECT_EQ(g.fc2.w[static_cast<std::size_t>(o) * g.fc2.in + 1], 0.0);
}

TEST(LossAndGrad, MatchesCentralFiniteDifferences) {
  const std::array<CnnArchitecture, 5> archs = {
      tiny_arch(17, 1, 1, 1, 2), tiny_arch(18, 2, 3, 2, 3), tiny_arch(19, 3, 2, 4, 5),
      tiny_arch(21, 2, 2, 3, 4), tiny_arch(26, 3, 3, 2, 6)};
  std::mt19937 rng(6);
  const double h = 1e-5;
  for (std::size_t t = 0; t < archs.size(); ++t) {
    auto p = init_params(archs[t], 100 + t);
    randomize_biases(p, rng);
    std::vector<Sample> batch;
    for (int i = 0; i < 3; ++i) {
      batch.push_back({random_input(archs[t].input_side, rng), label_at(static_cast<int>((i + t) % 4))});
    }
    const auto analytic = loss_and_grad(p, batch).grad;
    std::vector<const std::vector<double>*> grads;
    analytic.for_each_tensor([&](const char*, const std::vector<double>& v, int, bool) { grads.push_back(&v); });

    double worst = 0.0;
    std::size_t tensor = 0;
    auto probe = p;
    probe.for_each_tensor([&](const char*, std::vector<double>& v, int, bool) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double saved = v[i];
        v[i] = saved + h;
        const double up = batch_loss(probe, batch);
        v[i] = saved - h;
        const double down = batch_loss(probe, batch);
        v[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double a = (*grads[tensor])[i];
        const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
        worst = std::max(worst, rel);
      }
      ++tensor;
    });
    EXPECT_LT(worst, 1e-4) << "architecture " << t;
  }
}

TEST(LossAndGrad, WorkerCountDoesNotChangeResult) {
  std::mt19937 rng(7);
  const auto p = init_params(tiny_arch(20, 3, 3, 3, 4), 8);
  std::vector<Sample> batch;
  for (int i = 0; i < 7; ++i) batch.push_back({random_input(20, rng), label_at(i % 4)});
  const auto one = loss_and_grad(p, batch, 1);
  const auto four = loss_and_grad(p, batch, 4);
  EXPECT_EQ(one.loss, four.loss);
  EXPECT_TRUE(one.grad == four.grad);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  const auto init = init_params(tiny_arch(), 1);
  std::vector<LabeledPatch> data = {{constant_patch({1, 2, 3}, 17, "a", 0), ClassLabel::Benign}};
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = train(init, data, cfg);
  EXPECT_TRUE(r.params == init);
  EXPECT_TRUE(r.metrics.empty());
}

TEST(Train, SameSeedGivesIdenticalParameters) {
  std::vector<LabeledPatch> data;
  std::mt19937 rng(9);
  for (int i = 0; i < 12; ++i) {
    RasterImage img(20, 20);
    for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng() & 0xff);
    data.push_back({Patch{"i" + std::to_string(i / 4), i % 4, img, 0, 0, 0}, label_at(i % 4)});
  }
  const auto init = init_params(tiny_arch(17, 2, 2, 2, 4), 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 5;
  cfg.seed = 21;
  AugmentConfig aug;
  const auto a = train(init, data, cfg, aug);
  cfg.workers = 3;
  const auto b = train(init, data, cfg, aug);
  EXPECT_EQ(encode_checkpoint(a.params), encode_checkpoint(b.params));
  ASSERT_EQ(a.metrics.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.metrics[i].loss, b.metrics[i].loss);
  cfg.seed = 22;
  EXPECT_FALSE(train(init, data, cfg, aug).params == a.params);
}

TEST(Train, LearnsSeparableColours) {
  const std::array<std::array<std::uint8_t, 3>, 4> colour = {
      {{220, 40, 40}, {40, 220, 40}, {40, 40, 220}, {220, 220, 40}}};
  std::vector<LabeledPatch> data;
  for (int i = 0; i < 16; ++i) {
    auto c = colour[i % 4];
    for (auto& v : c) v = static_cast<std::uint8_t>(v - 2 * (i / 4));
    data.push_back({constant_patch(c, 17, "img" + std::to_string(i), 0), label_at(i % 4)});
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 4;
  cfg.epochs = 200;
  cfg.seed = 1;
  const auto r = train(init_params(tiny_arch(17, 8, 8, 8, 16), 1), data, cfg, std::nullopt,
                       [](const EpochMetrics& m) { return m.patch_acc < 1.0; });
  ASSERT_FALSE(r.metrics.empty());
  EXPECT_EQ(r.metrics.back().patch_acc, 1.0);
  EXPECT_LT(r.metrics.back().loss, r.metrics.front().loss);
}

TEST(Train, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(PredictPatch, ZeroNetPicksLowestClass) {
  const auto p = CnnParameters::zeros(tiny_arch());
  const auto r = predict_patch(p, constant_patch({9, 9, 9}, 30, "z", 4), 17);
  EXPECT_EQ(r.label, ClassLabel::Normal);
  ASSERT_TRUE(r.probs);
  for (double v : *r.probs) EXPECT_EQ(v, 0.25);
  EXPECT_EQ(r.image_id, "z");
  EXPECT_EQ(r.patch_index, 4);
}

TEST(PredictPatch, LabelIsShiftInvariant) {
  std::mt19937 rng(10);
  for (int t = 0; t < 5; ++t) {
    auto p = init_params(tiny_arch(17, 3, 3, 3, 8), static_cast<std::uint64_t>(t));
    randomize_biases(p, rng);
    RasterImage img(17, 17);
    for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(rng() & 0xff);
    const Patch patch{"s", 0, img, 0, 0, 0};
    const auto before = predict_patch(p, patch, 17);
    for (auto& b : p.fc2.b) b += 3.25;
    const auto after = predict_patch(p, patch, 17);
    EXPECT_EQ(before.label, after.label);
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) {
      EXPECT_NEAR((*before.probs)[c], (*after.probs)[c], 1e-12);
      sum += (*after.probs)[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(FilterExport, SixteenFiltersMakeFourByFourGrid) {
  const auto p = init_params(CnnArchitecture{32}, 1);
  const auto img = export_first_layer_filters(p);
  EXPECT_EQ(img.width(), 4 * 32 + 3 * 2);
  EXPECT_EQ(img.height(), 4 * 32 + 3 * 2);
  for (int y = 0; y < img.height(); ++y) {
    EXPECT_EQ(img.pixel(32, y), (std::array<std::uint8_t, 3>{0, 0, 0}));
    EXPECT_EQ(img.pixel(33, y), (std::array<std::uint8_t, 3>{0, 0, 0}));
  }
}

TEST(FilterExport, MinMaxNormalization) {
  auto p = CnnParameters::zeros(tiny_arch(17, 2, 1, 1, 1));
  // Filter 0 stays constant (all zero); filter 1 spans -1..1 with a 0 entry.
  for (std::size_t i = 0; i < 12; ++i) p.conv1.w[12 + i] = 0.0;
  p.conv1.w[12] = -1.0;
  p.conv1.w[13] = 1.0;
  const auto img = export_first_layer_filters(p);
  EXPECT_EQ(img.pixel(5, 5), (std::array<std::uint8_t, 3>{128, 128, 128}));
  const int ox = 32 + 2;
  EXPECT_EQ(img.at(ox, 0, 0), 0);     // w[c=0][0][0] = -1
  EXPECT_EQ(img.at(ox + 16, 0, 0), 255);  // w[c=0][0][1] = 1
  EXPECT_EQ(img.at(ox, 16, 0), 128);  // w[c=0][1][0] = 0
  EXPECT_EQ(img.at(ox, 0, 1), 128);
}

TEST(Checkpoint, RoundTripIsByteExact) {
  std::mt19937 rng(11);
  auto p = init_params(tiny_arch(20, 3, 2, 2, 5), 77);
  randomize_biases(p, rng);
  const auto bytes = encode_checkpoint(p);
  const auto back = decode_checkpoint(bytes);
  EXPECT_TRUE(back == p);
  EXPECT_EQ(back.arch, p.arch);
  EXPECT_EQ(back.seed, 77u);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "HISTOCNN");
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = encode_checkpoint(init_params(tiny_arch(), 1));
  auto kind = [](std::vector<std::uint8_t> b) {
    try {
      decode_checkpoint(b);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoError;
  };
  auto cut = bytes;
  cut.pop_back();
  EXPECT_EQ(kind(cut), ErrorKind::MalformedFile);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(kind(magic), ErrorKind::MalformedFile);
  auto version = bytes;
  version[8] = 9;
  EXPECT_EQ(kind(version), ErrorKind::UnsupportedFormat);
  auto huge = bytes;
  huge[12 + 4] = 0xff;  // c1 low byte
  huge[12 + 6] = 0x10;
  EXPECT_EQ(kind(huge), ErrorKind::MalformedFile);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_EQ(kind(extra), ErrorKind::MalformedFile);
}
