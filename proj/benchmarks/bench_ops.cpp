#include <benchmark/benchmark.h>

#include "cloudfuse/fusion.hpp"
#include "cloudfuse/nn.hpp"
#include "cloudfuse/rng.hpp"

using namespace cloudfuse;

namespace {
TensorPtr random_tensor(std::vector<int> shape, std::uint64_t seed, bool grad = false) {
    Rng rng(seed);
    auto t = Tensor::create(std::move(shape));
    for (auto& v : t->data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    t->requires_grad = grad;
    return t;
}

ImageStack random_stack(int k, int side, std::uint64_t seed) {
    Rng rng(seed);
    ImageStack stack;
    stack.h = stack.w = side;
    for (int j = 0; j < k; ++j) {
        std::vector<float> img(static_cast<std::size_t>(3 * side * side));
        for (auto& v : img) v = static_cast<float>(rng.uniform());
        stack.images.push_back(std::move(img));
    }
    return stack;
}
} // namespace

static void BM_Conv2dForward(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    auto input = random_tensor({1, c, 64, 64}, 1);
    auto weight = random_tensor({c, c, 3, 3}, 2);
    auto bias = random_tensor({c}, 3);
    for (auto _ : state) {
        auto out = conv2d(input, weight, bias, 1, 1);
        benchmark::DoNotOptimize(out->data.data());
    }
    state.SetItemsProcessed(state.iterations() * 64 * 64 * c);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

static void BM_Conv2dTrainStep(benchmark::State& state) {
    const int c = static_cast<int>(state.range(0));
    auto input = random_tensor({1, c, 64, 64}, 1);
    auto weight = random_tensor({c, c, 3, 3}, 2, true);
    auto bias = random_tensor({c}, 3, true);
    for (auto _ : state) {
        auto loss = sum_all(conv2d(input, weight, bias, 1, 1));
        backward(loss);
        benchmark::DoNotOptimize(weight->grad.data());
    }
}
BENCHMARK(BM_Conv2dTrainStep)->Arg(8)->Arg(16)->Arg(32);

static void BM_QualityForward(benchmark::State& state) {
    QualityNet net(7);
    auto img = random_tensor({1, 3, 64, 64}, 4);
    for (auto _ : state) {
        auto out = net.forward(img);
        benchmark::DoNotOptimize(out->data.data());
    }
}
BENCHMARK(BM_QualityForward);

static void BM_Fuse(benchmark::State& state) {
    QualityNet net(7);
    auto stack = random_stack(static_cast<int>(state.range(0)), 64, 9);
    for (auto _ : state) {
        auto result = fuse(stack, net);
        benchmark::DoNotOptimize(result.fused->data.data());
    }
}
BENCHMARK(BM_Fuse)->Arg(2)->Arg(4)->Arg(6);

BENCHMARK_MAIN();
