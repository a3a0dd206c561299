#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdc/common.hpp"
#include "sdc/sim.hpp"

namespace sdc {

// Requested controller design, read from the controller.synthesis section.
struct SynthesisSpec {
    enum class Kind { pole_placement, matching };
    Kind kind = Kind::pole_placement;
    Polynomial F0;
    Polynomial M0star, M1star;  // pole placement targets
    Polynomial Mm;              // matching target
    std::optional<Polynomial> T, L;
    double v = 0.0;
    double v1 = 0.0;
};

enum class ControllerKind { known, adaptive, matching };

// Parsed scenario file. Sections a command does not use may be absent; the
// command validates what it needs. Unknown keys anywhere are rejected.
struct ScenarioDoc {
    DescriptorSystem sys;
    SignalSpec reference;
    std::vector<SignalSpec> eta1, eta2;
    ControllerKind kind = ControllerKind::known;
    std::optional<ControllerParams> params;
    std::optional<AdaptiveConfig> adaptive;
    std::optional<SynthesisSpec> synthesis;
    bool compensator = false;
    std::optional<Polynomial> lambda;
    double v1 = 0.0;
    double t_end = 10.0;
    double dt = 0.01;
    unsigned int seed = 1;
    Eigen::VectorXd z10;
    SignalSpec psi;
    Tolerances tols;

    // closed-loop scenario; throws ValidationError when controller params
    // are missing
    Scenario to_scenario() const;
};

// Command-line overrides applied while parsing (seed must be known before
// noise signals are realized).
struct ParseOverrides {
    std::optional<unsigned int> seed;
    std::optional<int> k_syn;
    std::optional<double> tol_rank;
    std::optional<double> tol_decomp;
};

ScenarioDoc parse_scenario_text(const std::string& text,
                                const ParseOverrides& ov = {});
ScenarioDoc parse_scenario_file(const std::string& path,
                                const ParseOverrides& ov = {});

// Controller parameter round-trip; the emitted object is accepted unchanged
// as controller.params in a scenario file.
std::string controller_params_to_json(const ControllerParams& p);
ControllerParams controller_params_from_json(const std::string& text);

// Emission, all with %.15g significands and LF line endings.
std::string trajectory_csv(const RunResult& r);
std::string estimator_csv(const RunResult& r);
std::string diagnostics_json(const RunResult& r);

// Structural report for the analyze command. A non-regular pencil yields
// {"regular": false} and no further fields.
std::string analysis_report_json(const DescriptorSystem& sys, const Tolerances& tols);

}  // namespace sdc
