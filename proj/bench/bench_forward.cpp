#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <malloc.h>

#include "cenet/model/cenet.hpp"

int main(int argc, char** argv)
{
    using namespace cenet;
    if (std::getenv("MALLOPT")) { mallopt(M_MMAP_THRESHOLD, 1 << 30); mallopt(M_TRIM_THRESHOLD, 1 << 30); }
    NetworkConfig cfg;
    cfg.growth_k = argc > 1 ? std::atoi(argv[1]) : 4;
    cfg.base_channels = argc > 2 ? std::atoi(argv[2]) : 8;
    cfg.transition_channels = argc > 3 ? std::atoi(argv[3]) : 8;
    cfg.out_growth = argc > 4 ? std::atoi(argv[4]) : 4;
    cfg.out_hidden = argc > 5 ? std::atoi(argv[5]) : 8;
    int batch = argc > 6 ? std::atoi(argv[6]) : 1;
    cfg.group_n = std::getenv("GROUPN") ? std::atoi(std::getenv("GROUPN")) : 4;
    cfg.input_shape = {argc > 7 ? std::atoi(argv[7]) : 64, argc > 7 ? std::atoi(argv[7]) : 64, argc > 7 ? std::atoi(argv[7]) / 2 : 32};
    model::CENet<float> net(cfg);
    net.xavier_init(1);
    std::printf("params %lld\n", (long long)net.parameter_count());
    Tensor<float> x(batch, 1, cfg.input_shape.d, cfg.input_shape.h, cfg.input_shape.w);
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = float((i * 7919) % 1000) / 1000.f;
    for (int it = 0; it < (std::getenv("ITERS") ? std::atoi(std::getenv("ITERS")) : 2); ++it) {
        auto t0 = std::chrono::steady_clock::now();
        auto b = net.forward(x, nn::Mode::Train);
        auto t1 = std::chrono::steady_clock::now();
        model::BundleGrad<float> g{b.f_out, b.shape, b.f_contour};
        net.backward(g);
        auto t2 = std::chrono::steady_clock::now();
        std::printf("fwd %.3f s bwd %.3f s\n", std::chrono::duration<double>(t1 - t0).count(),
                    std::chrono::duration<double>(t2 - t1).count());
    }
}
