// Small end-to-end run through the library API: phantom, noise, training
// on neighboring slices, then PSNR/SSIM before and after.

#include <iostream>

#include "nsn2n/nsn2n.hpp"

int main()
{
    using namespace nsn2n;

    PhantomSpec phantom;
    phantom.width = 48;
    phantom.height = 48;
    phantom.depth = 12;
    const Volume clean = make_phantom(phantom);

    NoiseSpec noise;
    noise.model = NoiseModel::gaussian;
    noise.level = 0.07;
    const Volume noisy = add_noise(clean, noise);

    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.th = 0.03;
    cfg.adam.base_lr = 2e-3;
    ModelConfig model{2, 8, 3, 0.1};

    TrainOptions opts;
    opts.ground_truth = &clean;
    opts.on_epoch = [](const EpochRecord& r, const DenoiserModel<float>&) {
        std::cout << "epoch " << r.epoch << " loss " << r.loss_total << " psnr " << *r.psnr << "\n";
    };
    const auto result = train(noisy, cfg, model, LpfParams::for_noise_level(noise.level), opts);

    std::cout << "noisy:    " << table_line(evaluate_volume(noisy, clean)) << "\n";
    std::cout << "denoised: " << table_line(evaluate_volume(denoise_volume(result.model, noisy), clean)) << "\n";
}
