// Acceptance checks. One PASS/FAIL line per criterion; exit status is the failure count.

#include "../fuzz_util.hpp"
#include "../service_util.hpp"
#include "signloop/signloop.hpp"
#include "signloop/service/all.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

using namespace signloop;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  failures += o.pass ? 0 : 1;
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << " (" << std::fixed << std::setprecision(1) << secs << " s)"
            << o.detail.str() << std::endl;
}

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

MDNParams mixture(std::vector<double> pi, std::vector<std::vector<double>> mu, std::vector<double> sigma) {
  MDNParams p;
  p.pi = Eigen::Map<Eigen::VectorXd>(pi.data(), static_cast<Eigen::Index>(pi.size()));
  p.sigma = Eigen::Map<Eigen::VectorXd>(sigma.data(), static_cast<Eigen::Index>(sigma.size()));
  p.mu.resize(static_cast<Eigen::Index>(mu.size()), static_cast<Eigen::Index>(mu.front().size()));
  for (std::size_t k = 0; k < mu.size(); ++k) {
    for (std::size_t d = 0; d < mu[k].size(); ++d) p.mu(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = mu[k][d];
  }
  return p;
}

// ---------------------------------------------------------------------------

void streaming_equivalence(Outcome& o) {
  double worst = 0;
  bool exact = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EncoderConfig cfg;
    cfg.seed = seed + 1;
    const StreamEncoder enc(cfg, EncoderWeights::random(cfg));
    Rng rng = make_rng(hash_seed(7, seed));
    const int L = std::uniform_int_distribution<int>(16, 128)(rng);
    std::vector<MelFrame> xs;
    std::normal_distribution<double> n;
    for (int i = 0; i < L; ++i) {
      MelFrame x(cfg.input_dim);
      for (int j = 0; j < cfg.input_dim; ++j) x(j) = n(rng);
      xs.push_back(x);
    }
    const auto batch = enc.encode_batch(xs);

    EncoderState s = enc.initial_state();
    std::vector<FeatureFrame> step;
    for (const auto& x : xs) {
      if (auto f = enc.encode_step(x, s)) step.push_back(*f);
    }
    if (step.size() != batch.size()) {
      o.require(false, "frame count at seed " + std::to_string(seed));
      return;
    }
    for (std::size_t i = 0; i < step.size(); ++i) worst = std::max(worst, (step[i].h - batch[i].h).cwiseAbs().maxCoeff());

    EncoderState c = enc.initial_state();
    std::vector<FeatureFrame> chunked;
    std::uniform_int_distribution<int> chunk(1, 17);
    for (std::size_t i = 0; i < xs.size();) {
      const auto m = std::min<std::size_t>(static_cast<std::size_t>(chunk(rng)), xs.size() - i);
      auto part = enc.encode_chunk(std::span(xs).subspan(i, m), c);
      chunked.insert(chunked.end(), part.begin(), part.end());
      i += m;
    }
    exact = exact && chunked.size() == step.size();
    for (std::size_t i = 0; exact && i < step.size(); ++i) exact = chunked[i].h == step[i].h;
  }
  o.detail << " max|step-batch|=" << worst;
  o.require(worst <= 1e-5, "step vs batch <= 1e-5");
  o.require(exact, "chunk invariance");
}

// ---------------------------------------------------------------------------

struct ResampleFixture {
  DecoderConfig dcfg{.latent_dim = 8, .model_dim = 16, .feature_dim = 8, .blocks = 1, .components = 3, .vocab = 16,
                     .au_classes = 7, .max_context = 16, .cross_context = 4, .sigma_floor = 1e-4, .seed = 21};
  VaeConfig vcfg{.latent_dim = 8, .hidden1 = 32, .hidden2 = 24};
  Decoder decoder{dcfg};
  LatentVae vae{vcfg};
  ir::GlossVocab vocab = ir::GlossVocab::toy(16);
  Eigen::MatrixXd H;
  ResampleModel model;

  explicit ResampleFixture(long T) : H(gaussian(T, 8, 99)) { model = {&decoder, &vae, &H, &vocab, 25.0, 1.0}; }

  [[nodiscard]] MotionTrack track(long T) const {
    std::vector<ir::ActionSegment> segs;
    for (long i = 0; i * 50 < T; ++i) segs.push_back(ir::simple_segment(vocab.name(1 + static_cast<int>(i % 15)), 2.0));
    return generate_track(model, segs, T, 5);
  }
};

void resample_locality(Outcome& o) {
  constexpr long T = 1000, delta = 50;
  ResampleFixture fx(T);
  const MotionTrack base = fx.track(T);
  Rng rng = make_rng(11);
  std::uniform_int_distribution<long> pos(1, T);
  int contained = 0;
  for (int i = 0; i < 100; ++i) {
    MotionTrack tr = base;
    const long t = pos(rng);
    const auto spans = ir::segment_frame_spans(tr.segments, 25.0);
    const EditEvent e{t, ir::Patch{ir::segment_at_frame(spans, t), {{"emphasis", i % 2 ? "mild" : "strong"}}}, static_cast<std::uint64_t>(i)};
    apply_edit(tr, {e, {delta, 8}, edit_seed(3, e.seq_no)}, fx.model);
    // window recomputed here rather than taken from the report
    const long t_min = std::max(1L, t - delta / 2), t_max = std::min(T, t_min + delta - 1);
    bool ok = true;
    for (long f = 1; f <= T; ++f) {
      const bool moved = !(tr.frames.at(f).pose == base.frames.at(f).pose);
      if (moved && (f < t_min || f > t_max)) ok = false;
    }
    contained += ok ? 1 : 0;
  }
  MotionTrack idle = base;
  std::deque<EditEvent> none;
  drain_queue(idle, none, {delta, 8}, 1, fx.model);
  o.detail << " contained " << contained << "/100";
  o.require(contained == 100, "changed frames inside window");
  o.require(idle.frames.checksum() == base.frames.checksum(), "empty queue checksum");
}

void resample_cost(Outcome& o) {
  ResampleFixture fx(1);
  auto mean_us = [&](long T, long delta) {
    // best of three means damps scheduler noise on a shared core
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t rep = 0; rep < 3; ++rep) {
      best = std::min(best, cost_probe({T}, {delta}, 20, fx.decoder, fx.vae, fx.vocab, 8, 40 + rep).front().mean_us);
    }
    return best;
  };
  const double small = mean_us(500, 50), large = mean_us(4000, 50);
  const double ratio = std::max(small, large) / std::min(small, large);
  std::vector<double> lx, ly;
  for (long d : {25L, 50L, 100L, 200L, 400L}) {
    lx.push_back(std::log(static_cast<double>(d)));
    ly.push_back(std::log(mean_us(2000, d)));
  }
  const LinearFit fit = least_squares(lx, ly);
  o.detail << " ratio=" << ratio << " slope=" << fit.slope;
  o.require(ratio <= 1.5, "T ratio <= 1.5");
  o.require(std::abs(fit.slope - 1.0) <= 0.3, "slope 1 +- 0.3");
}

// ---------------------------------------------------------------------------

void vae_correctness(Outcome& o) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(128);
  const std::vector<double> p(PoseVector::kSize, 0.25);
  Eigen::VectorXd unit = zero;
  unit(0) = 1.0;
  const double kl0 = vae_loss(p, p, zero, zero).kl, kl1 = vae_loss(p, p, unit, zero).kl;
  o.require(std::abs(kl0) <= 1e-9, "KL 0");
  o.require(std::abs(kl1 - 0.5) <= 1e-9, "KL 0.5");

  LatentVae tiny({.latent_dim = 4, .hidden1 = 6, .hidden2 = 5});
  const Eigen::MatrixXd x = gaussian(1, PoseVector::kSize, 8, 0.5);
  const std::vector<double> pose(x.data(), x.data() + x.size());
  const double grad_err = vae_grad_check(tiny, pose, 1e-5);
  o.require(grad_err <= 1e-4, "grad rel err <= 1e-4");

  const Eigen::MatrixXd poses = synthetic_poses({.rows = 512, .factors = 6, .factor_scale = 1.0, .noise = 0.01});
  LatentVae vae({.latent_dim = 8, .hidden1 = 64, .hidden2 = 48});
  vae_train(vae, poses, {.epochs = 150, .batch = 64, .lr = 3e-3});
  const double kept = variance_retention(vae, poses);
  o.detail << " grad_err=" << grad_err << " retention=" << kept;
  o.require(kept >= 0.95, "retention >= 0.95");
}

// ---------------------------------------------------------------------------

void mdn_correctness(Outcome& o) {
  {
    DecoderConfig c{.latent_dim = 3, .model_dim = 8, .feature_dim = 6, .blocks = 2, .components = 4, .vocab = 10};
    const Decoder dec(c);
    const Eigen::MatrixXd H = gaussian(40, 6, 2), Z = gaussian(40, 3, 3, 5.0);
    DecoderState s = dec.initial_state();
    std::optional<Eigen::VectorXd> prev;
    bool simplex = true;
    for (Eigen::Index t = 0; t < Z.rows(); ++t) {
      auto [out, z] = dec.decode_step(s, H, prev, {}, SampleMode{1.0, static_cast<std::uint64_t>(t)});
      simplex = simplex && std::abs(out.mdn.pi.sum() - 1.0) <= 1e-9 && out.mdn.pi.minCoeff() >= 0.0;
      prev = z;
    }
    o.require(simplex, "pi simplex");
  }
  {
    const auto p = mixture({1.0}, {{2.0, -1.0, 0.5}}, {0.7});
    Rng rng = make_rng(12);
    const int N = 100000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3), sq = Eigen::VectorXd::Zero(3);
    for (int i = 0; i < N; ++i) {
      const auto z = mdn_sample(p, 1.0, rng);
      sum += z;
      sq += z.cwiseAbs2();
    }
    const Eigen::VectorXd mean = sum / N, var = sq / N - mean.cwiseAbs2();
    bool ok = true;
    for (int d = 0; d < 3; ++d) {
      ok = ok && std::abs(mean(d) - p.mu(0, d)) <= 0.05 * std::abs(p.mu(0, d));
      ok = ok && std::abs(var(d) - 0.49) <= 0.05 * 0.49;
    }
    o.require(ok, "K=1 moments within 5%");
  }
  {
    const auto p = mixture({0.5, 0.3, 0.2}, {{-10.0}, {0.0}, {10.0}}, {0.5, 0.5, 0.5});
    Rng rng = make_rng(13);
    const int N = 100000;
    std::array<int, 3> hits{};
    for (int i = 0; i < N; ++i) {
      const double z = mdn_sample(p, 1.0, rng)(0);
      ++hits[z < -5 ? 0 : z < 5 ? 1 : 2];
    }
    bool ok = true;
    for (int k = 0; k < 3; ++k) ok = ok && std::abs(hits[static_cast<std::size_t>(k)] / static_cast<double>(N) - p.pi(k)) <= 0.01;
    o.require(ok, "component frequencies +- 0.01");
  }
  {
    DecoderConfig cfg{.latent_dim = 2, .model_dim = 16, .feature_dim = 6, .blocks = 2, .components = 5, .vocab = 10,
                      .max_context = 6, .cross_context = 4};
    Decoder dec(cfg);
    const Eigen::Vector2d c0(1.0, 1.0), c1(-1.0, -0.5);
    Rng rng = make_rng(31);
    std::normal_distribution<double> n(0.0, 0.1);
    std::bernoulli_distribution coin(0.5);
    const Eigen::MatrixXd H = gaussian(8, cfg.feature_dim, 100);
    auto draw = [&] {
      SequenceExample ex;
      ex.features = H;
      ex.latents.resize(8, 2);
      for (int t = 0; t < 8; ++t) {
        const Eigen::Vector2d c = coin(rng) ? c0 : c1;
        ex.latents.row(t) << c(0) + n(rng), c(1) + n(rng);
      }
      ex.conditioning.assign(8, StepConditioning{});
      return ex;
    };
    std::vector<SequenceExample> data;
    for (int i = 0; i < 64; ++i) data.push_back(draw());
    const SequenceExample held_out = draw();
    auto mean_nll = [&] {
      double s = 0;
      for (const auto& ex : data) s += sequence_nll(dec, ex);
      return s / static_cast<double>(data.size());
    };
    const double before = mean_nll();
    train_decoder(dec, nullptr, data, {.steps = 200, .lr = 1e-2, .batch = 4});
    const double after = mean_nll();
    const double drop = (before - after) / std::abs(before);
    int recovered = 0;
    const auto steps = dec.forward_sequence(held_out.features, held_out.latents, held_out.conditioning);
    for (const auto& s : steps) {
      const MDNParams p = dec.to_params(s);
      bool near0 = false, near1 = false;
      for (int k = 0; k < p.components(); ++k) {
        if (p.pi(k) < 0.2) continue;
        near0 = near0 || (p.mu.row(k).transpose() - c0).norm() <= 0.2;
        near1 = near1 || (p.mu.row(k).transpose() - c1).norm() <= 0.2;
      }
      recovered += (near0 && near1) ? 1 : 0;
    }
    o.detail << " nll_drop=" << drop << " modes " << recovered << "/" << steps.size();
    o.require(drop >= 0.30, "NLL drop >= 30%");
    o.require(recovered == static_cast<int>(steps.size()), "both modes");
  }
}

// ---------------------------------------------------------------------------

// Direct evaluation of the weighted-distance heatmap value.
double alpha_oracle(const MDNParams& p, const Eigen::VectorXd& z) {
  const double total = p.pi.sum();
  double a = 0;
  for (int k = 0; k < p.components(); ++k) a += p.pi(k) / total / (1.0 + std::exp(-(z - p.mu.row(k).transpose()).norm()));
  return a;
}

void uncertainty(Outcome& o) {
  const auto same = mixture({0.2, 0.5, 0.3}, {{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}, {1, 1, 1});
  o.require(uncertainty_alpha(same, Eigen::Vector2d(1.0, 2.0)) == 0.5, "0.5 at zero distance");

  auto p = mixture({0.4, 0.6}, {{0.0}, {0.0}}, {1, 1});
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);
  double prev = uncertainty_alpha(p, z), worst = 0;
  bool monotone = true;
  for (int i = 1; i <= 200; ++i) {
    p.mu(1, 0) = 0.05 * i;
    const double a = uncertainty_alpha(p, z);
    monotone = monotone && a >= prev;
    worst = std::max(worst, std::abs(a - alpha_oracle(p, z)));
    prev = a;
  }
  o.require(monotone, "monotone");
  o.require(worst <= 1e-12, "matches direct evaluation");

  auto q = mixture({0.2, 0.5, 0.3}, {{1.0}, {-2.0}, {0.5}}, {1, 1, 1});
  const Eigen::VectorXd zq = Eigen::VectorXd::Constant(1, 0.1);
  const double a = uncertainty_alpha(q, zq);
  q.pi *= 7.5;
  o.require(std::abs(uncertainty_alpha(q, zq) - a) <= 1e-15, "normalization invariant");
}

// ---------------------------------------------------------------------------

Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

void ik_exactness(Outcome& o) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> len(0.1, 0.5), u(0, 1);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    LimbSpec L{"arm", Vec3(0.1, 1.2, -0.3), len(rng), len(rng), random_direction(rng), 0};
    const double dmin = std::abs(L.l1 - L.l2), dmax = L.l1 + L.l2;
    const double d = dmin + (dmax - dmin) * u(rng);
    const Vec3 target = L.base + random_direction(rng) * d;
    const IkResult r = two_bone_ik(L, target);
    const Vec3 a = L.base - r.joint, b = r.effector - r.joint;
    const double angle = std::atan2(a.cross(b).norm(), a.dot(b));
    const double oracle = std::acos(std::clamp((L.l1 * L.l1 + L.l2 * L.l2 - d * d) / (2 * L.l1 * L.l2), -1.0, 1.0));
    worst = std::max({worst, std::abs(angle - oracle), (r.effector - target).norm(), std::abs((r.joint - L.base).norm() - L.l1),
                      std::abs(b.norm() - L.l2)});
  }
  o.detail << " worst=" << worst;
  o.require(worst <= 1e-6, "law of cosines <= 1e-6");

  std::optional<Eigen::VectorXd> carry = spline_smooth(Eigen::VectorXd::Zero(1), std::nullopt, 0.1);
  double step_err = 0;
  for (int n = 1; n <= 30; ++n) {
    carry = spline_smooth(Eigen::VectorXd::Ones(1), carry, 0.1);
    step_err = std::max(step_err, std::abs((*carry)(0) - (1.0 - std::pow(0.1, n))));
  }
  o.require(step_err <= 1e-9, "step response");

  const Rig rig = default_rig();
  std::uniform_real_distribution<double> reach(0.1, 0.5);
  std::vector<Eigen::VectorXd> raw, smooth;
  std::optional<SkeletonFrame> prev;
  bool lengths = true;
  for (FrameIndex t = 1; t <= 400; ++t) {
    std::vector<double> v(PoseVector::kSize, 0.0);
    const Vec3 right = random_direction(rng) * reach(rng), left = random_direction(rng) * reach(rng);
    for (int i = 0; i < 3; ++i) {
      v[static_cast<std::size_t>(i)] = right(i);
      v[static_cast<std::size_t>(3 + i)] = left(i);
    }
    const PoseVector p(v);
    const SkeletonFrame r = solve_ik_frame(p, rig, t);
    for (std::size_t li = 0; li < rig.size(); ++li) {
      lengths = lengths && std::abs((r.joint(3 * li + 1) - r.joint(3 * li)).norm() - rig[li].l1) <= 1e-6;
      lengths = lengths && std::abs((r.joint(3 * li + 2) - r.joint(3 * li + 1)).norm() - rig[li].l2) <= 1e-6;
    }
    prev = solve_frame(p, rig, prev, 0.1, t);
    raw.push_back(r.positions);
    smooth.push_back(prev->positions);
  }
  auto energy = [](const std::vector<Eigen::VectorXd>& xs) {
    double e = 0;
    for (std::size_t t = 2; t < xs.size(); ++t) e += (xs[t] - 2 * xs[t - 1] + xs[t - 2]).squaredNorm();
    return e;
  };
  o.require(lengths, "bone lengths");
  o.require(energy(smooth) < energy(raw), "jitter reduced");
}

// ---------------------------------------------------------------------------

void ir_schema(Outcome& o) {
  std::ifstream in(std::string(SIGNLOOP_SOURCE_DIR) + "/samples/thank_you.json");
  const ir::Json doc = ir::Json::parse(in);
  const ir::ActionSegment s = ir::validate(doc);
  o.require(ir::to_json(s) == doc, "fixture structural round trip");
  o.require(ir::validate_text(ir::serialize(s)) == s, "fixture text round trip");

  const std::vector<ir::ActionSegment> segs{s};
  int refused = 0;
  for (std::string_view f : ir::kRejectedFields) {
    try {
      ir::apply_patch(segs, ir::Patch{0, {{std::string(f), 1.0}}}, 25);
    } catch (const ir::ValidationError& e) {
      refused += e.code() == "rejected_field" ? 1 : 0;
    }
  }
  o.require(refused == 6, "six rejected fields refused");

  Rng rng = make_rng(77);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const ir::ActionSegment r = ir::random_segment(rng);
    ok += ir::validate_text(ir::serialize(r, i % 2 == 0 ? -1 : 2)) == r ? 1 : 0;
  }
  o.detail << " random " << ok << "/1000";
  o.require(ok == 1000, "random round trip");
}

// ---------------------------------------------------------------------------

std::vector<SequenceExample> toy_task(int n, Eigen::Vector2d center, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<SequenceExample> out;
  for (int i = 0; i < n; ++i) {
    SequenceExample ex;
    ex.features = Eigen::MatrixXd::Zero(6, 4);
    ex.latents.resize(6, 2);
    for (int t = 0; t < 6; ++t) {
      ex.latents(t, 0) = center(0) + g(rng);
      ex.latents(t, 1) = center(1) + g(rng);
      for (int c = 0; c < 4; ++c) ex.features(t, c) = g(rng);
    }
    ex.conditioning.assign(6, StepConditioning{1, 0.5, 0.0});
    out.push_back(std::move(ex));
  }
  return out;
}

void hitl_checks(Outcome& o) {
  {
    constexpr int kRuns = 200, kN = 15000, kCap = 1500, kBins = 50;
    std::vector<long> retained(kN, 0);
    for (int run = 0; run < kRuns; ++run) {
      hitl::ReplayBuffer<int> b(kCap);
      Rng rng = make_rng(static_cast<std::uint64_t>(run) + 5000);
      for (int i = 0; i < kN; ++i) b.insert(i, rng);
      for (int v : b.items()) ++retained[static_cast<std::size_t>(v)];
    }
    double first = 0;
    for (int i = 0; i < kCap; ++i) first += static_cast<double>(retained[static_cast<std::size_t>(i)]);
    const double rate = first / (kRuns * static_cast<double>(kCap));
    const double expected = static_cast<double>(kRuns) * kCap / kBins;
    double chi2 = 0;
    for (int bin = 0; bin < kBins; ++bin) {
      double obs = 0;
      for (int i = bin * (kN / kBins); i < (bin + 1) * (kN / kBins); ++i) obs += static_cast<double>(retained[static_cast<std::size_t>(i)]);
      chi2 += (obs - expected) * (obs - expected) / expected;
    }
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(kBins - 1), chi2));
    o.detail << " retention=" << rate << " p=" << p;
    o.require(std::abs(rate - 0.10) <= 0.01, "retention 0.10 +- 0.01");
    o.require(p > 0.01, "chi-square p > 0.01");
  }

  const DecoderConfig dc{.latent_dim = 2, .model_dim = 8, .feature_dim = 4, .blocks = 2, .components = 2, .vocab = 4,
                         .au_classes = 3, .max_context = 8, .cross_context = 4, .sigma_floor = 1e-4, .seed = 31};
  const auto task_a = toy_task(16, {1, 1}, 5), task_b = toy_task(16, {-1, 0.5}, 6);
  Decoder base(dc);
  train_decoder(base, nullptr, task_a, {.steps = 150, .lr = 1e-2, .batch = 4});
  Decoder probe = base.clone();
  const hitl::FisherDiag f = hitl::estimate_fisher(probe, nullptr, task_a, {}, 0.2);
  o.require(hitl::ewc_penalty(probe.params(), f) == 0.0, "EWC zero at reference");

  std::vector<hitl::WeightedExample> batch;
  for (const auto& ex : task_b) batch.push_back({&ex, 1.0});
  std::vector<double> drift;
  for (double lambda : {0.0, 10.0, 100.0}) {
    Decoder d = base.clone();
    Adam opt({.lr = 5e-3});
    for (int s = 0; s < 60; ++s) hitl::fine_tune_step(d, nullptr, batch, base, &f, {0.0, lambda, {}}, opt, {});
    const Eigen::VectorXd theta = d.params().flatten();
    double sq = 0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      if (f.anchored[static_cast<std::size_t>(i)]) sq += (theta(i) - f.reference(i)) * (theta(i) - f.reference(i));
    }
    drift.push_back(std::sqrt(sq));
  }
  o.detail << " drift " << drift[0] << " > " << drift[1] << " > " << drift[2];
  o.require(drift[0] > drift[1] && drift[1] > drift[2], "drift monotone in lambda");

  const hitl::SchedulerConfig cfg;
  const hitl::TimePoint t0(1000h);
  struct Row {
    std::size_t pending;
    std::chrono::hours elapsed;
    bool fire;
  };
  const std::vector<Row> rows{{450, 0h, true},        {449, 0h, false},           {0, 14 * 24h, true},
                              {0, 14 * 24h - 1h, false}, {449, 14 * 24h - 1h, false}, {1000, 30 * 24h, true}};
  bool table = true;
  for (const auto& r : rows) {
    hitl::SchedulerState s{t0, r.pending};
    table = table && (hitl::schedule_tick(s, t0 + r.elapsed, cfg) == hitl::Decision::fine_tune) == r.fire;
  }
  o.require(table, "scheduler truth table");
}

// ---------------------------------------------------------------------------

std::vector<float> speech(double seconds) {
  auto s = service::tone_sweep(seconds, 220, 880, 16000, 0.4);
  const auto n = service::noise_burst(seconds, 16000, 3, 0.1);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += n[i];
  return s;
}

void service_checks(Outcome& o) {
  const auto dir = signloop::testing::scratch_dir("acceptance");
  {
    service::Service svc(signloop::testing::small_service_config(dir));
    const service::Json patch{{"target_segment", 0}, {"set", {{"emphasis", "strong"}}}};
    auto run = [&] {
      auto s = svc.get(svc.create_session({{"seed", 42}}));
      auto sub = s->subscribe(0);
      const auto pcm = speech(3.0);
      for (std::size_t i = 0; i < pcm.size(); i += 4000) s->push_audio(std::span(pcm).subspan(i, std::min<std::size_t>(4000, pcm.size() - i)));
      s->end_audio();
      s->submit_edit(patch);
      std::vector<service::Json> msgs;
      for (auto m : sub->drain()) {
        m.erase("session");
        if (m["type"] == "resample") m["report"].erase("elapsed_us");
        msgs.push_back(std::move(m));
      }
      return std::pair(s->checksum(), msgs);
    };
    const auto a = run(), b = run();
    o.require(a == b, "identical seeded sessions");
  }
  {
    service::Service svc(signloop::testing::small_service_config(dir));
    auto s = svc.get(svc.create_session({{"window", {{"delta", 6}, {"k", 2}}}}));
    s->push_audio(speech(2.0));
    s->end_audio();
    signloop::testing::EditFuzzer fuzz(2024);
    long internal = 0, accepted = 0;
    for (int i = 0; i < 100000; ++i) {
      const std::string body = fuzz.next();
      try {
        s->submit_edit(service::Json::parse(body));
        ++accepted;
      } catch (...) {
        internal += service::error_response(std::current_exception()).first >= 500 ? 1 : 0;
      }
    }
    o.detail << " fuzz accepted=" << accepted << " internal=" << internal;
    o.require(internal == 0, "no internal errors under fuzz");
    o.require(s->state() == service::SessionState::editable, "session survives fuzz");
  }
  {
    service::Service svc(signloop::testing::small_service_config(dir));
    auto s = svc.get(svc.create_session({{"seed", 8}}));
    auto sub = s->subscribe(0);
    const auto pcm = speech(4.0);
    for (std::size_t i = 0; i < pcm.size(); i += 3000) s->push_audio(std::span(pcm).subspan(i, std::min<std::size_t>(3000, pcm.size() - i)));
    s->end_audio();
    std::mt19937_64 rng(4);
    static const std::array<const char*, 3> emph{"none", "mild", "strong"};
    for (int i = 0; i < 60; ++i) {
      const auto n = s->segments().size();
      const auto target = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      s->submit_edit({{"target_segment", target}, {"set", {{"emphasis", emph[static_cast<std::size_t>(i % 3)]}}}});
    }
    long last = -1, lo = 0, hi = -1, supersedes = 0;
    bool monotone = true;
    for (const auto& m : sub->drain()) {
      if (m["type"] == "resample") {
        lo = m["report"]["t_min"].get<long>() - 1;
        hi = m["report"]["t_max"].get<long>() - 1;
      }
      if (m["type"] != "frame") continue;
      const long idx = m["index"];
      if (m["supersede"].get<bool>()) {
        ++supersedes;
        monotone = monotone && idx >= lo && idx <= hi;
      } else {
        monotone = monotone && idx == last + 1;
        last = idx;
      }
    }
    o.require(monotone && last + 1 == s->frames() && supersedes > 0, "stream monotone under edit storm");
  }
  std::filesystem::remove_all(dir);
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  criterion("streaming equivalence", streaming_equivalence);
  criterion("resample locality", resample_locality);
  criterion("resample cost independence", resample_cost);
  criterion("vae correctness", vae_correctness);
  criterion("mdn correctness", mdn_correctness);
  criterion("uncertainty formula", uncertainty);
  criterion("ik exactness", ik_exactness);
  criterion("ir schema", ir_schema);
  criterion("hitl", hitl_checks);
  criterion("service", service_checks);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
