#pragma once

// A pipeline small enough to run end to end in well under a second.
inline constexpr const char* kTinyConfig = R"toml(
seed = 3
[paths]
workdir = "w"
dataset = ""
[stage.synth]
num_source_train = 4
num_target_train = 4
num_target_val = 1
num_target_test = 2
dims = [16, 16, 16]
spacing = [1.0, 1.0, 1.0]
lesions_min = 1
lesions_max = 2
radius_min = 2.5
radius_max = 4.0
lesion_contrast_min = 0.25
lesion_contrast_max = 0.45
source_base_intensity = 0.0
source_contrast_sign = 1
source_gamma = 1.0
source_noise_min = 0.02
source_noise_max = 0.04
target_base_intensity = 0.0
target_contrast_sign = -1
target_gamma = 2.0
target_noise_min = 0.02
target_noise_max = 0.12
[stage.translate]
epochs = 3
steps_per_epoch = 2
batch = 2
lambda_cyc = 10.0
lr = 1e-3
beta1 = 0.5
gan = "least_squares"
ngf = 4
residual_blocks = 1
ndf = 4
[stage.train-generator]
epochs = 2
steps_per_epoch = 2
batch = 2
patch = [8, 8, 8]
lr = 1e-3
base_width = 4
levels = 3
flat_levels = 1
dropout = 0.3
bn_momentum = 0.1
bn_eps = 1e-5
[stage.build-records]
K = 3
e = 0.2
[stage.train-segmentor]
epochs = 2
steps_per_epoch = 2
batch = 2
patch = [8, 8, 8]
lr = 1e-3
init_from_generator = true
[stage.infer]
patch = [8, 8, 8]
z_overlap = 0.5
inplane_overlap = 0.25
tiles_per_forward = 8
)toml";
