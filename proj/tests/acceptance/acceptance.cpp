// Acceptance run: one PASS/FAIL line per criterion, mirrored into a report
// file. Exit status is 0 once every criterion has been executed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rapforge/data.hpp"
#include "rapforge/eval.hpp"
#include "rapforge/losses.hpp"
#include "rapforge/nets.hpp"
#include "rapforge/ops.hpp"
#include "rapforge/perturb.hpp"
#include "rapforge/train.hpp"

namespace fs = std::filesystem;
using namespace rap;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// stderr progress, stdout verdicts
void progress(const std::string& msg) {
  static const auto t0 = Clock::now();
  std::cerr << "[" << std::setw(7) << fmt(seconds_since(t0), 1) << "s] " << msg << std::endl;
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic gradients against an independent long-double oracle.

long double oracle_ce(const std::vector<long double>& z, int y) {
  const long double m = *std::max_element(z.begin(), z.end());
  long double s = 0;
  for (auto v : z) s += std::exp(v - m);
  return -(z[static_cast<std::size_t>(y)] - m - std::log(s));
}

// Central differences with Richardson extrapolation, all in long double.
std::vector<long double> oracle_fd(const std::function<long double(const std::vector<long double>&)>& f,
                                   const std::vector<long double>& x) {
  std::vector<long double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto d = [&](long double h) {
      auto p = x, q = x;
      p[i] += h;
      q[i] -= h;
      return (f(p) - f(q)) / (2 * h);
    };
    const long double h = 1e-4L;
    g[i] = (4 * d(h / 2) - d(h)) / 3;
  }
  return g;
}

Verdict criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(-5, 5);
  double worst_fd = 0, worst_ad = 0;
  std::size_t pairs = 0;
  for (std::size_t c : {2u, 10u}) {
    for (int trial = 0; trial < 1000; ++trial, ++pairs) {
      std::vector<double> a(c), ap(c);
      for (auto& v : a) v = u(rng);
      for (auto& v : ap) v = u(rng);
      const int y = std::uniform_int_distribution<int>(0, static_cast<int>(c) - 1)(rng);
      const std::vector<int> labels{y};
      const Tensor ta = Tensor::from({1, c}, a), tap = Tensor::from({1, c}, ap);

      const Tensor g_ce = losses::analytic_ce_grad(tap, labels);
      const Tensor g_rce = losses::analytic_rce_grad({ta, tap, labels});

      std::vector<long double> lap(ap.begin(), ap.end()), la(a.begin(), a.end());
      const auto fd_ce = oracle_fd([&](const std::vector<long double>& z) { return oracle_ce(z, y); }, lap);
      const auto fd_rce = oracle_fd(
          [&](const std::vector<long double>& z) {
            std::vector<long double> d(c);
            for (std::size_t k = 0; k < c; ++k) d[k] = z[k] - la[k];
            return oracle_ce(d, y);
          },
          lap);

      auto rel = [&](const Tensor& g, const std::vector<long double>& ref) {
        long double num = 0, den = 0;
        for (std::size_t k = 0; k < c; ++k) {
          num += (g[k] - ref[k]) * (g[k] - ref[k]);
          den += ref[k] * ref[k];
        }
        return static_cast<double>(std::sqrt(num / den));
      };
      worst_fd = std::max({worst_fd, rel(g_ce, fd_ce), rel(g_rce, fd_rce)});

      Tensor l1 = tap.clone().set_requires_grad(true);
      backward(losses::ce_loss(l1, labels));
      Tensor l2 = tap.clone().set_requires_grad(true);
      backward(losses::rce_loss({ta, l2, labels}));
      for (std::size_t k = 0; k < c; ++k) {
        worst_ad = std::max({worst_ad, std::abs(l1.grad()[k] - g_ce[k]), std::abs(l2.grad()[k] - g_rce[k])});
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_fd < 1e-6 && worst_ad <= 1e-12 && secs < 10.0;
  return {pass, std::to_string(pairs) + " pairs (c=2,10): max rel err vs finite differences " + sci(worst_fd) +
                    " (< 1e-6), max |autodiff - analytic| " + sci(worst_ad) + " (<= 1e-12), " + fmt(secs) +
                    " s (< 10 s)"};
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient dominance under the confident-clean /
// confident-wrong precondition.

Verdict criterion2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2002);
  std::uniform_real_distribution<double> u(-5, 5), extra(0, 1);
  std::ostringstream detail;
  bool all = true;
  std::size_t held_total = 0;
  std::vector<std::string> info;
  for (std::size_t c : {2u, 10u}) {
    std::size_t held = 0, dominant = 0, true_class = 0;
    for (int i = 0; i < 10000; ++i) {
      std::vector<double> a(c), ap(c);
      for (auto& v : a) v = u(rng);
      for (auto& v : ap) v = u(rng);
      const int y = std::uniform_int_distribution<int>(0, static_cast<int>(c) - 1)(rng);
      double hi = -1e300, lo = 1e300;
      for (std::size_t j = 0; j < c; ++j) {
        if (static_cast<int>(j) == y) continue;
        hi = std::max(hi, a[j]);
        lo = std::min(lo, ap[j]);
      }
      a[static_cast<std::size_t>(y)] = hi + 1.0 + extra(rng);
      ap[static_cast<std::size_t>(y)] = lo - 1.0 - extra(rng);
      const auto d = losses::dominance_check(a, ap, y, 1.0);
      if (!d.precondition_held) continue;
      ++held;
      dominant += d.dominant;
      true_class += d.rce_true_class > d.ce_true_class;
    }
    held_total += held;
    all = all && held == 10000 && dominant == held;
    detail << "c=" << c << ": " << dominant << "/" << held << " (" << fmt(100.0 * dominant / held) << "%); ";
    info.push_back("c=" + std::to_string(c) + " true-class component |1-r_y| > |1-p'_y| in " +
                   std::to_string(true_class) + "/" + std::to_string(held));
  }
  const double secs = seconds_since(t0);
  detail << "l2 norm RCE > CE required in 100%, " << fmt(secs) << " s (< 10 s)";
  for (const auto& line : info) progress("criterion 2 info: " + line);
  return {all && secs < 10.0, detail.str()};
}

// ---------------------------------------------------------------------------
// Criterion 3: projection exactness.

Verdict criterion3() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3003);
  std::uniform_real_distribution<double> unit(0, 1), expo(-3, 9), sgn(-1, 1);
  std::size_t violations = 0, not_idempotent = 0;
  const std::size_t n = 64;
  for (int t = 0; t < 10000; ++t) {
    const perturb::PerturbationBudget b{std::max(1e-6, unit(rng)), 0.0, 1.0};
    std::vector<double> x(n), g(n);
    for (auto& v : x) v = unit(rng);
    for (auto& v : g) v = (sgn(rng) < 0 ? -1.0 : 1.0) * std::pow(10.0, expo(rng));  // |g| up to 1e9
    if (t % 10 == 0) g[0] = 1e9, g[1] = -1e9;
    const Tensor tx = Tensor::from({1, 1, 8, 8}, x);
    const Tensor xp = perturb::project(tx, Tensor::from({1, 1, 8, 8}, g), b);
    for (std::size_t i = 0; i < n; ++i) {
      if (!(std::abs(xp[i] - x[i]) <= b.epsilon) || xp[i] < 0.0 || xp[i] > 1.0) ++violations;
    }
    const Tensor again = perturb::project(tx, xp, b);
    for (std::size_t i = 0; i < n; ++i) not_idempotent += again[i] != xp[i];
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && not_idempotent == 0 && secs < 5.0,
          "10000 triples x 64 pixels, |g| up to 1e9: " + std::to_string(violations) + " bound violations, " +
              std::to_string(not_idempotent) + " non-idempotent pixels, " + fmt(secs) + " s (< 5 s)"};
}

// ---------------------------------------------------------------------------
// Criterion 4: Gaussian kernel.

Verdict criterion4() {
  const auto k = perturb::gaussian_kernel(3, 1.0);
  const double expect = 1.0 / (1.0 + 4.0 * std::exp(-0.5) + 4.0 * std::exp(-1.0));
  const double center_err = std::abs(k.weights[4] - expect);
  double const_err = 0;
  for (double level : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    const Tensor img = Tensor::full({2, 1, 28, 28}, level);
    const Tensor out = perturb::smooth(img, k);
    for (double v : out.data()) const_err = std::max(const_err, std::abs(v - level));
  }
  return {center_err <= 1e-12 && const_err <= 1e-12,
          "center " + fmt(k.weights[4], 12) + " vs " + fmt(expect, 12) + " (err " + sci(center_err) +
              "), constant-image max deviation " + sci(const_err) + " (both <= 1e-12)"};
}

// ---------------------------------------------------------------------------
// Desk-scale experiments (criteria 5-9).

constexpr std::size_t kTrain = 4096, kVal = 1000, kTest = 1000;

data::DatasetHandle labeled_domain(const std::string& generator, std::uint64_t seed) {
  data::DomainSpec s;
  s.generator = generator;
  s.seed = seed;
  s.size = kTrain + kVal + kTest;
  auto h = data::synth_domain(s);
  h.name = generator;
  const double n = static_cast<double>(s.size);
  return data::split(std::move(h), {kTrain / n, kVal / n, kTest / n}, seed);
}

struct Lab {
  data::DatasetHandle glyphs, shapes, texture;
  std::optional<nets::ClassifierNet> A, M, B;  // convnet-s / convnet-m on glyphs, convnet-s on shapes
  data::DatasetHandle glyphs_test, shapes_test;

  struct RunKey {
    std::string domain, loss;
    double epsilon;
    std::uint64_t seed;
    auto operator<=>(const RunKey&) const = default;
  };
  struct Run {
    nets::GeneratorNet generator;
    std::vector<train::EpochRecord> history;
    double seconds;
  };
  std::map<RunKey, Run> runs;

  nets::ClassifierNet train_clf(const std::string& arch, std::uint64_t seed, const data::DatasetHandle& d,
                                const std::string& label) {
    auto net = nets::ClassifierNet::build(arch, seed);
    train::ClassifierTrainConfig cfg;
    cfg.seed = seed;
    const auto t0 = Clock::now();
    const auto r = train::train_classifier(net, d, cfg);
    progress("classifier " + label + " (" + arch + " on " + d.name + "): val accuracy " + fmt(r.val_accuracy) +
             "% in " + fmt(seconds_since(t0), 1) + " s");
    return net;
  }

  const nets::ClassifierNet& clf_A() {
    if (!A) A = train_clf("convnet-s", 11, glyphs_data(), "A");
    return *A;
  }
  const nets::ClassifierNet& clf_M() {
    if (!M) M = train_clf("convnet-m", 12, glyphs_data(), "M");
    return *M;
  }
  const nets::ClassifierNet& clf_B() {
    if (!B) B = train_clf("convnet-s", 21, shapes_data(), "B");
    return *B;
  }
  const data::DatasetHandle& glyphs_data() {
    if (glyphs.size() == 0) {
      glyphs = labeled_domain("glyphs", 7);
      glyphs_test = glyphs.subset(glyphs.splits.test, "glyphs-test");
    }
    return glyphs;
  }
  const data::DatasetHandle& shapes_data() {
    if (shapes.size() == 0) {
      shapes = labeled_domain("shapes", 8);
      shapes_test = shapes.subset(shapes.splits.test, "shapes-test");
    }
    return shapes;
  }
  const data::DatasetHandle& texture_data() {
    if (texture.size() == 0) {
      data::DomainSpec s;
      s.generator = "value-noise";
      s.seed = 9;
      s.size = kTrain + 500;
      texture = data::synth_domain(s);
      texture.name = "value-noise";
      const double n = static_cast<double>(s.size);
      texture = data::split(std::move(texture), {kTrain / n, 500 / n, 0.0}, 9);
    }
    return texture;
  }

  // Generator trained against classifier A for 5 epochs.
  const Run& run(const std::string& domain, const std::string& loss, double epsilon, std::uint64_t seed) {
    const RunKey key{domain, loss, epsilon, seed};
    if (auto it = runs.find(key); it != runs.end()) return it->second;
    const auto& d = domain == "glyphs" ? glyphs_data() : texture_data();
    const auto& clf = clf_A();
    train::TrainConfig cfg;
    cfg.loss_kind = losses::LossKind::parse(loss);
    cfg.budget = {epsilon, 0.0, 1.0};
    cfg.epochs = 5;
    cfg.seed = seed;
    const auto t0 = Clock::now();
    auto r = train::train_generator(nets::GeneratorNet::build("resgen-s", seed), clf, d, cfg);
    const double secs = seconds_since(t0);
    std::string hist;
    for (const auto& e : r.history) hist += " " + fmt(e.val_fool_rate.value_or(-1), 1);
    progress("generator " + loss + " on " + domain + " eps=" + fmt(epsilon * 255, 1) + "/255 seed " +
             std::to_string(seed) + ": " + fmt(secs, 1) + " s, val fooling per epoch:" + hist);
    return runs.emplace(key, Run{std::move(r.generator), std::move(r.history), secs}).first->second;
  }
};

Lab& lab() {
  static Lab l;
  return l;
}

double white_box_fool(const nets::GeneratorNet& gen, const nets::ClassifierNet& clf, const data::DatasetHandle& test,
                      double epsilon) {
  const perturb::PerturbationBudget b{epsilon, 0.0, 1.0};
  const Tensor adv = eval::generate_adversarial(gen, test.images, b);
  return eval::fooling_rate(clf, test.images, adv, b);
}

Verdict criterion5() {
  auto& L = lab();
  const auto t0 = Clock::now();
  L.clf_A();
  std::ostringstream detail;
  bool pass = true;
  double train_secs = 0;
  for (double eps : {0.3, 10.0 / 255}) {
    double total = 0;
    std::string per;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto& r = L.run("glyphs", "rce", eps, seed);
      train_secs += r.seconds;
      const double f = white_box_fool(r.generator, L.clf_A(), L.glyphs_test, eps);
      total += f;
      per += (per.empty() ? "" : ", ") + fmt(f);
    }
    const double mean = total / 3;
    const double need = eps > 0.2 ? 90.0 : 60.0;
    pass = pass && mean >= need;
    detail << "eps=" << (eps > 0.2 ? std::string("0.3") : std::string("10/255")) << ": mean " << fmt(mean) << "% [" << per
           << "] (>= " << fmt(need, 0) << "%); ";
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 20 * 60;
  detail << "1000 held-out samples, 3 seeds, " << fmt(secs / 60, 1) << " min incl. classifier (< 20 min)";
  return {pass, detail.str()};
}

// One-sided sign test: P(X >= k) for X ~ Binomial(n, 1/2).
double sign_test(std::size_t k, std::size_t n) {
  double p = 0;
  for (std::size_t i = k; i <= n; ++i) {
    double c = 1;
    for (std::size_t j = 0; j < i; ++j) c = c * static_cast<double>(n - j) / static_cast<double>(j + 1);
    p += c;
  }
  return p / std::pow(2.0, static_cast<double>(n));
}

Verdict criterion6() {
  auto& L = lab();
  const double eps = 0.3;
  const auto& M = L.clf_M();
  std::vector<double> diffs;
  std::string per;
  double ce_sum = 0, rce_sum = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double rce = white_box_fool(L.run("glyphs", "rce", eps, seed).generator, M, L.glyphs_test, eps);
    const double ce = white_box_fool(L.run("glyphs", "ce", eps, seed).generator, M, L.glyphs_test, eps);
    diffs.push_back(rce - ce);
    rce_sum += rce;
    ce_sum += ce;
    per += (per.empty() ? "" : ", ") + fmt(rce) + "/" + fmt(ce);
  }
  std::size_t wins = 0, nonzero = 0;
  for (double d : diffs) {
    wins += d > 0;
    nonzero += d != 0;
  }
  const double p = nonzero == 0 ? 1.0 : sign_test(wins, nonzero);
  const double mean_diff = std::accumulate(diffs.begin(), diffs.end(), 0.0) / 5;
  const bool pass = rce_sum > ce_sum && mean_diff > 0 && p < 0.05;
  return {pass, "black-box on convnet-m, eps=0.3, 5 seeds RCE/CE: [" + per + "]; mean RCE " + fmt(rce_sum / 5) +
                    "% vs CE " + fmt(ce_sum / 5) + "%, paired diff " + fmt(mean_diff) + " pts, RCE wins " +
                    std::to_string(wins) + "/" + std::to_string(nonzero) + ", sign test p=" + fmt(p, 4) + " (< 0.05)"};
}

Verdict criterion7() {
  auto& L = lab();
  const double eps = 16.0 / 255;
  const perturb::PerturbationBudget b{eps, 0.0, 1.0};
  const auto& B = L.clf_B();
  bool pass = true;
  std::string per;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto& r = L.run("texture", "rce", eps, seed);
    const eval::AttackSource gen{"gen", r.generator, std::nullopt, "A", "value-noise"};
    const eval::TargetClassifier target{"B", &B, "shapes"};
    const auto g = eval::evaluate(gen, target, L.shapes_test, b, seed);
    const auto n = eval::evaluate(eval::AttackSource::noise_baseline(), target, L.shapes_test, b, seed);
    if (g.error || n.error) throw Error("evaluation failed: " + g.error.value_or(n.error.value_or("")));
    const bool ok = g.fool_rate > n.fool_rate && g.fool_rate >= 1.5 * n.fool_rate;
    pass = pass && ok && g.threat_model == eval::ThreatModel::cross_domain_black_box;
    per += (per.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": " + fmt(g.fool_rate) +
           "% vs noise " + fmt(n.fool_rate) + "%";
  }
  return {pass, "value-noise texture -> convnet-s on shapes (cross-domain), eps=16/255: " + per +
                    " (each >= 1.5x noise and > noise)"};
}

Verdict criterion8() {
  auto& L = lab();
  const double eps = 0.3;
  const int target = 3;
  const auto& A = L.clf_A();
  const auto ref = eval::predict(A, L.glyphs_test.images);
  bool pass = true;
  std::string per;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto& r = L.run("glyphs", "targeted:" + std::to_string(target), eps, seed);
    const Tensor adv = eval::generate_adversarial(r.generator, L.glyphs_test.images, {eps, 0.0, 1.0});
    const double s = eval::targeted_success_rate(ref, eval::predict(A, adv), target);
    pass = pass && s >= 50.0;
    per += (per.empty() ? "" : ", ") + fmt(s) + "%";
  }
  return {pass, "target class 3, eps=0.3, held-out success per seed: " + per + " (each >= 50%, 5x chance)"};
}

Verdict criterion9() {
  auto& L = lab();
  bool pass = true;
  std::string per;
  for (double eps : {0.3, 10.0 / 255}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto& r = L.run("glyphs", "rce", eps, seed);
      double worst_drop = 0;
      std::string hist;
      for (std::size_t i = 0; i < r.history.size(); ++i) {
        const double v = r.history[i].val_fool_rate.value();
        hist += (hist.empty() ? "" : ">") + fmt(v, 1);
        if (i > 0) worst_drop = std::max(worst_drop, r.history[i - 1].val_fool_rate.value() - v);
      }
      pass = pass && r.history.size() == 5 && worst_drop <= 2.0;
      per += (per.empty() ? "" : "; ") + std::string(eps > 0.2 ? "0.3" : "10/255") + " s" + std::to_string(seed) +
             ": " + hist;
    }
  }
  return {pass, "white-box validation fooling per epoch 1..5, max drop per step <= 2 pts: " + per};
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism and persistence through the CLI.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

void sh(const std::string& cmd) {
  if (std::system(cmd.c_str()) != 0) throw Error("command failed: " + cmd);
}

Verdict criterion10(const fs::path& work, const fs::path& cli) {
  std::ostringstream detail;
  bool pass = true;

  const nlohmann::json cfg = nlohmann::json::parse(R"({
    "seed": 2024,
    "out_dir": "out",
    "data": [
      {"id": "glyphs", "kind": "synthetic", "generator": "glyphs", "size": 600, "seed": 5, "split": [0.7, 0.15, 0.15]},
      {"id": "tex", "kind": "synthetic", "generator": "stripes", "size": 200, "seed": 6, "split": [0.8, 0.2, 0.0]}
    ],
    "classifiers": [
      {"name": "cs", "arch": "convnet-s", "data": "glyphs", "epochs": 1},
      {"name": "cm", "arch": "convnet-m", "data": "glyphs", "epochs": 1}
    ],
    "generator": {"name": "g", "classifier": "cs", "data": "tex", "loss": "rce", "epsilon": 16, "epochs": 2,
                  "smoothing": true},
    "eval": {"generators": ["g"], "targets": ["cs", "cm"], "data": "glyphs", "epsilon": [16, 10], "samples": 60}
  })");
  std::vector<std::map<std::string, std::string>> outputs;
  for (const char* name : {"run1", "run2"}) {
    const fs::path dir = work / "determinism" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << cfg.dump(2);
    const std::string base = "cd '" + dir.string() + "' && '" + cli.string() + "' ";
    const std::string quiet = " >> log.txt 2>&1";
    sh(base + "train-classifier --config config.json" + quiet);
    sh(base + "train-generator --config config.json" + quiet);
    sh(base + "eval --matrix config.json" + quiet);
    sh(base + "attack --config config.json --generator out/generators/g/final.rapw --dataset glyphs --epsilon 16 "
              "--out out/attack --count 8" +
       quiet);
    outputs.push_back(tree(dir / "out"));
  }
  std::size_t weights = 0, csvs = 0, pngs = 0, differing = 0;
  std::set<std::string> names;
  for (const auto& [k, v] : outputs[0]) names.insert(k);
  for (const auto& [k, v] : outputs[1]) names.insert(k);
  for (const auto& k : names) {
    const auto a = outputs[0].find(k), b = outputs[1].find(k);
    if (a == outputs[0].end() || b == outputs[1].end() || a->second != b->second) {
      ++differing;
      progress("criterion 10: differs between runs: " + k);
    }
    const auto ext = fs::path(k).extension();
    weights += ext == ".rapw";
    csvs += ext == ".csv";
    pngs += ext == ".png";
  }
  pass = pass && differing == 0 && weights > 0 && csvs > 0 && pngs > 0;
  detail << "two CLI pipeline runs: " << names.size() << " files (" << weights << " weight, " << csvs << " csv, "
         << pngs << " png), " << differing << " differ; ";

  // weight round trip
  const fs::path wdir = work / "determinism" / "run1" / "out";
  const auto clf = nets::load_classifier(wdir / "classifiers" / "cs.rapw");
  nets::save_weights(clf, work / "determinism" / "roundtrip.rapw");
  const bool same_bytes = slurp(wdir / "classifiers" / "cs.rapw") == slurp(work / "determinism" / "roundtrip.rapw");
  const auto again = nets::load_classifier(work / "determinism" / "roundtrip.rapw");
  bool same_values = true;
  for (std::size_t i = 0; i < clf.parameters().size(); ++i) {
    const auto x = clf.parameters()[i].value.data(), y = again.parameters()[i].value.data();
    same_values = same_values && std::equal(x.begin(), x.end(), y.begin(), y.end());
  }
  pass = pass && same_bytes && same_values;
  detail << "weight round trip " << (same_bytes && same_values ? "bit-exact" : "MISMATCH") << "; ";

  // corrupted checkpoint
  const fs::path ckdir = work / "determinism" / "corrupt";
  fs::remove_all(ckdir);
  fs::copy(wdir / "generators" / "g", ckdir, fs::copy_options::recursive);
  {
    const fs::path w = train::checkpoint_weights(ckdir, 1);
    std::string bytes = slurp(w);
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
    std::ofstream(w, std::ios::binary) << bytes;
  }
  bool detected = false;
  try {
    train::load_checkpoint(ckdir, 1);
  } catch (const FormatError& e) {
    detected = e.kind() == FormatError::Kind::checksum_mismatch;
  }
  pass = pass && detected;
  detail << "corrupted checkpoint " << (detected ? "rejected by checksum" : "NOT detected");
  return {pass, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  fs::path work = "acceptance_work", report = "acceptance_report.txt", cli = "rapforge";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--report", report, "report file");
  app.add_option("--cli", cli, "rapforge executable");
  app.add_option("--only", only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  work = fs::absolute(work);
  cli = fs::absolute(cli);

  const std::vector<std::pair<int, std::string>> names{
      {1, "gradient correctness"}, {2, "RCE gradient dominance"}, {3, "projection exactness"},
      {4, "Gaussian kernel"},      {5, "white-box efficacy"},     {6, "RCE > CE transferability"},
      {7, "cross-domain vs noise"}, {8, "targeted attack"},       {9, "epoch trend"},
      {10, "determinism and persistence"}};

  std::ofstream out(report);
  std::size_t passed = 0, ran = 0;
  for (const auto& [id, name] : names) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    progress("criterion " + std::to_string(id) + ": " + name);
    Verdict v;
    try {
      switch (id) {
        case 1: v = criterion1(); break;
        case 2: v = criterion2(); break;
        case 3: v = criterion3(); break;
        case 4: v = criterion4(); break;
        case 5: v = criterion5(); break;
        case 6: v = criterion6(); break;
        case 7: v = criterion7(); break;
        case 8: v = criterion8(); break;
        case 9: v = criterion9(); break;
        case 10: v = criterion10(work, cli); break;
      }
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    ++ran;
    passed += v.pass;
    const std::string line =
        std::string(v.pass ? "PASS" : "FAIL") + "  " + std::to_string(id) + ". " + name + " | " + v.detail;
    std::cout << line << std::endl;
    out << line << '\n';
    out.flush();
  }
  const std::string summary = std::to_string(passed) + "/" + std::to_string(ran) + " criteria passed";
  std::cout << summary << std::endl;
  out << summary << '\n';
  return 0;
}
