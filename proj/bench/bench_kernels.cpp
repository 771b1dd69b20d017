// Times the serial reference kernels against the OpenMP versions and checks
// that both agree bit for bit.
#include <chrono>
#include <cstdio>
#include <random>

#include "imood/kernels.hpp"
#include "imood/pipeline.hpp"

using namespace imood;
using Clock = std::chrono::steady_clock;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = n(rng);
  return m;
}

template <typename F>
double seconds_per_call(F&& f, int reps) {
  f();
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-22s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, serial * 1e3, parallel * 1e3,
              serial / parallel, same ? "identical" : "MISMATCH");
}

}  // namespace

int main() {
  std::mt19937_64 rng(42);
  std::printf("OpenMP threads: %d\n", kernels::max_threads());
  bool all_same = true;

  for (std::size_t n : {64, 256, 512}) {
    const Matrix a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
    const int reps = n <= 64 ? 200 : (n <= 256 ? 10 : 3);
    char name[64];

    std::snprintf(name, sizeof name, "matmul %zu", n);
    const bool s1 = kernels::serial::matmul(a, b) == kernels::parallel::matmul(a, b);
    report(name, seconds_per_call([&] { (void)kernels::serial::matmul(a, b); }, reps),
           seconds_per_call([&] { (void)kernels::parallel::matmul(a, b); }, reps), s1);

    std::snprintf(name, sizeof name, "matmul_tn %zu", n);
    const bool s2 = kernels::serial::matmul_tn(a, b) == kernels::parallel::matmul_tn(a, b);
    report(name, seconds_per_call([&] { (void)kernels::serial::matmul_tn(a, b); }, reps),
           seconds_per_call([&] { (void)kernels::parallel::matmul_tn(a, b); }, reps), s2);

    std::snprintf(name, sizeof name, "matmul_nt %zu", n);
    const bool s3 = kernels::serial::matmul_nt(a, b) == kernels::parallel::matmul_nt(a, b);
    report(name, seconds_per_call([&] { (void)kernels::serial::matmul_nt(a, b); }, reps),
           seconds_per_call([&] { (void)kernels::parallel::matmul_nt(a, b); }, reps), s3);
    all_same = all_same && s1 && s2 && s3;
  }

  // One training step's loss and gradient at the default shapes.
  TrainConfig cfg;
  const Benchmark bench = make_benchmark(cfg.data);
  BatchSampler sampler(bench.id_train, bench.ood_train, 1024, 0);
  const Batch batch = sampler.next();
  Objective obj;
  obj.prior = class_prior(count_classes(bench.id_train.labels, cfg.data.longtail.num_classes));
  const ModelParams params = init_params(cfg.data.longtail.dim, 256, cfg.data.longtail.num_classes, 0);
  const double t = seconds_per_call([&] { (void)total_loss(obj, params, batch); }, 20);
  std::printf("total_loss batch 1024, h 256: %.3f ms\n", t * 1e3);
  return all_same ? 0 : 1;
}
