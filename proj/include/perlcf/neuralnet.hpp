#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "perlcf/domain.hpp"
#include "perlcf/ingest.hpp"

namespace perlcf {

enum class CellType { lstm, gru };
enum class OutputActivation { linear, relu };

std::string to_string(CellType c);
std::string to_string(OutputActivation a);
CellType parse_cell_type(const std::string& name);
OutputActivation parse_output_activation(const std::string& name);

/// Two stacked recurrent layers (units1, units2), dropout after the layer-1
/// sequence, after the layer-2 final state and after a tanh dense layer
/// (dense_units), then a linear output layer of output_dim followed by the
/// output activation.
struct NetConfig {
    CellType cell = CellType::lstm;
    std::size_t units1 = 32;
    std::size_t units2 = 16;
    std::size_t dense_units = 16;
    double dropout = 0.2;
    std::size_t output_dim = 1;
    std::size_t input_dim = 12;
    OutputActivation output_activation = OutputActivation::linear;
    std::uint64_t seed = 0;

    std::size_t gates() const noexcept { return cell == CellType::lstm ? 4 : 3; }
    void validate() const;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
};

using TensorList = std::vector<Tensor>;

// Fixed tensor order of every RecurrentNet and gradient list.
enum TensorId : std::size_t {
    kRnn1W, kRnn1U, kRnn1B, kRnn2W, kRnn2U, kRnn2B, kDenseW, kDenseB, kOutW, kOutB, kTensorCount
};

const std::vector<std::string>& tensor_names();

struct RecurrentNet {
    NetConfig config;
    NormStats norm;
    TensorList params;  // indexed by TensorId

    std::size_t parameter_count() const;
};

// Same shapes as the net's parameters, all zeros.
TensorList zeros_like(const TensorList& params);

/// Weights uniform in +-sqrt(1/fan_in) from config.seed; biases 0 except
/// the LSTM forget gate, which starts at 1.
RecurrentNet init_net(const NetConfig& config, const NormStats& norm = {});

// Inverted-dropout masks: each entry is 0 or 1/(1-p). Empty means identity.
struct DropoutMasks {
    std::vector<double> sequence1;  // [T][units1]
    std::vector<double> final2;     // [units2]
    std::vector<double> dense;      // [dense_units]
};

DropoutMasks draw_dropout_masks(const NetConfig& config, std::size_t steps, Rng& rng);

struct LayerCache {
    std::vector<double> gates;   // [T][G*H], post-activation
    std::vector<double> cell;    // [T+1][H], LSTM only
    std::vector<double> tanh_c;  // [T][H], LSTM only
    std::vector<double> hidden;  // [T+1][H], row 0 is the zero initial state
};

struct ForwardCache {
    std::size_t steps = 0;
    std::vector<double> input;      // [T][input_dim]
    LayerCache layer1, layer2;
    std::vector<double> layer2_in;  // [T][units1], layer-1 output after dropout
    std::vector<double> final_in;   // [units2], after dropout
    std::vector<double> dense_act;  // [dense_units], tanh output before dropout
    std::vector<double> dense_out;  // after dropout
    std::vector<double> pre_out;    // [output_dim]
    std::vector<double> output;
    DropoutMasks masks;
};

enum class Mode { train, eval };

/// Runs the network on a [steps][input_dim] row-major input. Train mode
/// draws fresh dropout masks from `dropout_rng`; eval mode applies none and
/// never touches the generator. Throws NumericError naming the first
/// non-finite tensor.
std::vector<double> forward(const RecurrentNet& net, std::span<const double> input, std::size_t steps,
                            Mode mode, Rng* dropout_rng, ForwardCache& cache);

// Forward with caller-supplied (frozen) dropout masks.
std::vector<double> forward_with_masks(const RecurrentNet& net, std::span<const double> input,
                                       std::size_t steps, const DropoutMasks& masks, ForwardCache& cache);

/// Adds d(loss)/d(params) into `grads`, given d(loss)/d(output).
void backward_accumulate(const RecurrentNet& net, const ForwardCache& cache,
                         std::span<const double> output_grad, TensorList& grads);

TensorList backward(const RecurrentNet& net, const ForwardCache& cache, std::span<const double> output_grad);

struct AdamState {
    TensorList m, v;
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam(const RecurrentNet& net, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                    double eps = 1e-8);

// Bias-corrected Adam update in place.
void adam_step(RecurrentNet& net, const TensorList& grads, AdamState& state);

// Normalized network input for a sample: per step, per vehicle (lead first),
// z-scored accel, speed and spacing; the lead vehicle's spacing is fed as 0.
std::vector<double> build_input(const TrajectorySample& s, const NormStats& norm);

void to_json(nlohmann::json& j, const RecurrentNet& net);
void from_json(const nlohmann::json& j, RecurrentNet& net);
void save_net(const RecurrentNet& net, const std::filesystem::path& path);
RecurrentNet load_net(const std::filesystem::path& path);

struct GradCheckConfig {
    CellType cell = CellType::lstm;
    std::size_t units1 = 4;
    std::size_t units2 = 3;
    std::size_t dense_units = 3;
    std::size_t input_dim = 6;
    std::size_t output_dim = 2;
    std::size_t steps = 5;
    double dropout = 0.0;
    OutputActivation output_activation = OutputActivation::linear;
    double step_size = 1e-5;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Compares backward() against central finite differences of a fixed random
/// linear functional of the output, over every parameter. Dropout masks are
/// drawn once and frozen. Relative error is |a-b| / max(|a|, |b|, 1e-6).
GradCheckResult gradient_check(const GradCheckConfig& config);

}  // namespace perlcf
