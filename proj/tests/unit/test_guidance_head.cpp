#include <doctest.h>

#include <cmath>
#include <fstream>

#include "instructir/guidance_head.hpp"
#include "support/support.hpp"

using namespace instructir;
using namespace testing;

TEST_SUITE("guidance_head") {

TEST_CASE("embedding is the normalized projection") {
  GuidanceHead head(HeadConfig{16, 8, 5, 0});
  auto raw = torch::randn({4, 16});
  auto out = head->forward(raw);
  CHECK(out.embedding.sizes() == torch::IntArrayRef({4, 8}));
  CHECK(out.logits.sizes() == torch::IntArrayRef({4, 5}));
  auto w = head->projection->weight.detach().to(torch::kFloat64);
  for (int i = 0; i < 4; ++i) {
    auto v = torch::mv(w, raw[i].to(torch::kFloat64));
    auto expected = v / std::sqrt((v * v).sum().item<double>());
    CHECK((out.embedding[i].to(torch::kFloat64) - expected).abs().max().item<double>() < 1e-6);
    CHECK(out.embedding[i].norm().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("zero-norm projection is a numeric error") {
  GuidanceHead head(HeadConfig{8, 4, 3, 0});
  CHECK_THROWS_AS(head->forward(torch::zeros({1, 8})), NumericError);
}

TEST_CASE("classifier width and parameter count") {
  HeadConfig cfg;  // 384 -> 256, D = 7
  CHECK(cfg.hidden_width() == 64);
  HeadConfig small{8, 4, 3, 0};
  CHECK(small.hidden_width() == 6);
  GuidanceHead head(cfg);
  CHECK(count_module_parameters(*head) == 384 * 256 + (256 * 64 + 64) + (64 * 7 + 7));
}

TEST_CASE("intent loss matches hand-computed cross-entropy") {
  auto logits = torch::zeros({2, 7});
  auto targets = torch::tensor({0, 6}, torch::kInt64);
  CHECK(intent_loss(logits, targets).item<double>() == doctest::Approx(std::log(7.0)));
  auto l = torch::tensor({{2.0, -1.0, 0.5}}, torch::kFloat64);
  const double expected = -std::log(std::exp(0.5) / (std::exp(2.0) + std::exp(-1.0) + std::exp(0.5)));
  CHECK(intent_loss(l, torch::tensor({2}, torch::kInt64)).item<double>() == doctest::Approx(expected));
  CHECK(intent_loss(l[0], Task::Deraining) == doctest::Approx(expected));
  auto bad = torch::tensor({{std::nan(""), 0.0}});
  CHECK_THROWS_AS(intent_loss(bad, torch::tensor({0}, torch::kInt64)), NumericError);
}

TEST_CASE("intent loss gradient matches finite differences") {
  auto l = torch::randn({3, 5}, torch::kFloat64).requires_grad_(true);
  auto y = torch::tensor({1, 4, 0}, torch::kInt64);
  intent_loss(l, y).backward();
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) {
      auto p = l.detach().clone();
      auto m = l.detach().clone();
      p[i][j] += h;
      m[i][j] -= h;
      const double fd = (intent_loss(p, y).item<double>() - intent_loss(m, y).item<double>()) / (2 * h);
      CHECK(l.grad()[i][j].item<double>() == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("classify_intent returns a probability") {
  GuidanceHead head(HeadConfig{32, 16, 5, 0});
  HashingEncoder enc(32, 256);
  auto [task, p] = classify_intent(head, enc, "Remove the noise from my picture");
  CHECK(task_id(task) < 5);
  CHECK(p > 0.0);
  CHECK(p <= 1.0);
  auto g = embed_instruction(head, enc, "Remove the noise from my picture");
  CHECK(g.predicted_task == task_id(task));
}

TEST_CASE("resizing the classifier keeps retained rows bit-exact") {
  GuidanceHead head(HeadConfig{16, 8, 5, 0});
  auto w = head->output->weight.detach().clone();
  auto b = head->output->bias.detach().clone();
  auto hidden = head->hidden->weight.detach().clone();
  head->resize_classes(7);
  CHECK(head->output->weight.size(0) == 7);
  CHECK(torch::equal(head->output->weight.narrow(0, 0, 5), w));
  CHECK(torch::equal(head->output->bias.narrow(0, 0, 5), b));
  CHECK(torch::equal(head->hidden->weight, hidden));
  CHECK(head->config().num_tasks == 7);
  CHECK_THROWS_AS(head->resize_classes(3), UnsupportedError);
}

TEST_CASE("head-only training learns the bank") {
  auto bank = expand_prompts(load_seed_prompts(), 7 * 300, 1);
  HashingEncoder enc(64, 2048);
  GuidanceHead head(HeadConfig{64, 32, 5, 0});
  HeadTrainOptions opt;
  opt.epochs = 8;
  opt.lr = 5e-3;
  auto report = train_guidance_head(head, enc, bank, TaskSet(5), opt);
  CHECK(report.epoch_loss.size() == 8);
  CHECK(report.epoch_loss.back() < report.epoch_loss.front());
  CHECK(report.epoch_test_accuracy.back() > 0.9);
  CHECK_THROWS_AS(train_guidance_head(head, enc, bank, TaskSet(7), opt), ConfigError);
}

TEST_CASE("embedding export writes one labelled row per prompt") {
  TempDir dir;
  auto bank = load_seed_prompts();
  HashingEncoder enc(16, 128);
  GuidanceHead head(HeadConfig{16, 6, 7, 0});
  export_embeddings(head, enc, bank, dir / "emb.txt");
  std::ifstream in(dir / "emb.txt");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    int task = -1;
    is >> task;
    CHECK(task == task_id(bank.records()[rows].task));
    double v, norm = 0.0;
    int dims = 0;
    while (is >> v) {
      norm += v * v;
      ++dims;
    }
    CHECK(dims == 6);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));
    ++rows;
  }
  CHECK(rows == bank.size());
}

}
