#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "sdc/adaptive.hpp"
#include "sdc/common.hpp"
#include "sdc/controller.hpp"
#include "sdc/pencil.hpp"
#include "sdc/scenario.hpp"
#include "sdc/sim.hpp"
#include "sdc/system.hpp"

namespace {

// exit contract: 0 success, 2 validation, 3 analysis or synthesis failure,
// 4 stability margin, 5 numerical blowup
constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kAnalysis = 3;
constexpr int kMargin = 4;
constexpr int kBlowup = 5;

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw sdc::ValidationError("cannot write '" + p.string() + "'");
    out << text;
    out.flush();
    if (!out) throw sdc::ValidationError("write failed for '" + p.string() + "'");
}

int cmd_analyze(const std::string& path, const sdc::ParseOverrides& ov) {
    sdc::ScenarioDoc doc = sdc::parse_scenario_file(path, ov);
    std::string report = sdc::analysis_report_json(doc.sys, doc.tols);
    std::fputs(report.c_str(), stdout);
    return kOk;
}

int cmd_synthesize(const std::string& path, const std::string& out,
                   const sdc::ParseOverrides& ov, const sdc::MarginOptions& mopts) {
    sdc::ScenarioDoc doc = sdc::parse_scenario_file(path, ov);
    if (!doc.synthesis)
        throw sdc::ValidationError("scenario has no controller.synthesis section");
    const sdc::SynthesisSpec& sp = *doc.synthesis;

    sdc::WeierstrassForm wf = sdc::weierstrass_decompose(doc.sys, doc.tols);
    sdc::PencilPolynomials pp = sdc::pencil_polynomials(doc.sys, doc.tols);
    sdc::MinimalityReport mr = sdc::minimality_check(wf, pp, doc.tols.tol_rank);
    if (!mr.minimal)
        throw sdc::NotMinimal("plant is not minimal; synthesis targets are not assignable");

    sdc::ControllerParams prm;
    if (sp.kind == sdc::SynthesisSpec::Kind::matching) {
        prm = sdc::model_matching_synthesis(pp, sp.F0, sp.Mm, sp.v, sp.T, doc.sys.h);
    } else {
        prm = sdc::synthesize_pole_placement(pp, sp.F0, sp.M0star, sp.M1star, sp.T,
                                             sp.L, doc.sys.h, sp.v, sp.v1, mopts);
    }
    std::string text = sdc::controller_params_to_json(prm);
    write_file(out, text);
    std::fputs(text.c_str(), stdout);
    SDC_LOG_INFO("controller written to %s", out.c_str());
    return kOk;
}

int emit_run(const sdc::RunResult& res, const std::string& outdir) {
    std::filesystem::path dir(outdir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec && !std::filesystem::is_directory(dir))
        throw sdc::ValidationError("cannot create output directory '" + outdir + "'");
    write_file(dir / "trajectory.csv", sdc::trajectory_csv(res));
    std::string est = sdc::estimator_csv(res);
    if (!est.empty()) write_file(dir / "estimator.csv", est);
    std::string diag = sdc::diagnostics_json(res);
    write_file(dir / "diagnostics.json", diag);
    std::fputs(diag.c_str(), stdout);
    if (res.diagnostics.blowup) {
        SDC_LOG_ERROR("state norm blew up at t = %.6g; run truncated",
                      res.diagnostics.blowup_t);
        return kBlowup;
    }
    return kOk;
}

int cmd_simulate(const std::string& path, const std::string& outdir,
                 const sdc::ParseOverrides& ov) {
    sdc::ScenarioDoc doc = sdc::parse_scenario_file(path, ov);
    sdc::Scenario sc = doc.to_scenario();
    sdc::RunResult res = sdc::run_closed_loop(sc);
    return emit_run(res, outdir);
}

int cmd_estimate(const std::string& path, const std::string& outdir,
                 const sdc::ParseOverrides& ov) {
    sdc::ScenarioDoc doc = sdc::parse_scenario_file(path, ov);
    sdc::Scenario sc;
    sc.sys = doc.sys;
    sc.reference = doc.reference;
    sc.eta1 = doc.eta1;
    sc.eta2 = doc.eta2;
    sc.adaptive = doc.adaptive;
    sc.t_end = doc.t_end;
    sc.dt = doc.dt;
    sc.z10 = doc.z10;
    sc.psi = doc.psi;
    sdc::RunResult res = sdc::run_open_loop_estimation(sc);
    return emit_run(res, outdir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"singular delay-control toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    sdc::ParseOverrides ov;
    sdc::MarginOptions mopts;
    std::string margin_sign = "-";
    double tol_rank = 0.0, tol_decomp = 0.0;
    long long seed = -1;
    int ksyn = 0;
    app.add_option("--tol-rank", tol_rank, "rank-decision tolerance override");
    app.add_option("--tol-decomp", tol_decomp, "decomposition residual tolerance override");
    app.add_option("--margin-line-sign", margin_sign,
                   "side of the decay line for margin scans: + or -");
    app.add_option("--ksyn", ksyn, "adaptive redesign cadence override (grid steps)");
    app.add_option("--seed", seed, "base seed override for generated signals");

    std::string path, out, outdir;
    CLI::App* a_analyze = app.add_subcommand("analyze", "structural report for a scenario");
    a_analyze->add_option("path", path, "scenario JSON file")->required();
    CLI::App* a_synth = app.add_subcommand("synthesize", "design a controller");
    a_synth->add_option("path", path, "scenario JSON file")->required();
    a_synth->add_option("out", out, "output controller JSON file")->required();
    CLI::App* a_sim = app.add_subcommand("simulate", "run the closed loop");
    a_sim->add_option("path", path, "scenario JSON file")->required();
    a_sim->add_option("outdir", outdir, "output directory")->required();
    CLI::App* a_est = app.add_subcommand("estimate", "open-loop estimation run");
    a_est->add_option("path", path, "scenario JSON file")->required();
    a_est->add_option("outdir", outdir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (tol_rank > 0.0) ov.tol_rank = tol_rank;
        if (tol_decomp > 0.0) ov.tol_decomp = tol_decomp;
        if (seed >= 0) ov.seed = static_cast<unsigned int>(seed);
        if (ksyn > 0) ov.k_syn = ksyn;
        if (margin_sign == "+")
            mopts.line_sign = 1;
        else if (margin_sign == "-")
            mopts.line_sign = -1;
        else
            throw sdc::ValidationError("--margin-line-sign must be + or -");

        if (a_analyze->parsed()) return cmd_analyze(path, ov);
        if (a_synth->parsed()) return cmd_synthesize(path, out, ov, mopts);
        if (a_sim->parsed()) return cmd_simulate(path, outdir, ov);
        if (a_est->parsed()) return cmd_estimate(path, outdir, ov);
        return kValidation;
    } catch (const sdc::StabilityMarginFailed& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        std::fprintf(stdout, "{\n  \"error\": \"StabilityMarginFailed\",\n  \"margin\": %.15g\n}\n",
                     e.margin);
        return kMargin;
    } catch (const sdc::NumericalBlowup& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kBlowup;
    } catch (const sdc::StepTooLarge& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const sdc::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kValidation;
    } catch (const sdc::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kAnalysis;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kAnalysis;
    }
}
