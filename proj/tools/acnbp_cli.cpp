// Scenario runner and inspection tool for the ACNBP stack.
//
//   acnbp run <scenario> [--seed N] [--weights a,b,c,d,e] [--assert] [--trace-dir DIR]
//   acnbp verify-audit <log>
//   acnbp inspect-anri <snapshot>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "acnbp/scenario.hpp"

using namespace acnbp;
namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed,
            const std::string& weights_csv, bool check, const std::string& trace_dir) {
    ScenarioLoad loaded = load_scenario(path);
    if (!loaded.ok()) {
        std::cerr << "scenario rejected:\n" << loaded.violations_text();
        return 2;
    }

    RunOverrides overrides;
    overrides.seed = seed;
    overrides.check_expected = check;
    if (!weights_csv.empty()) {
        ScoringWeights w;
        double* slots[5] = {&w.compatibility, &w.security, &w.reputation, &w.cost, &w.risk};
        std::stringstream ss(weights_csv);
        std::string part;
        int i = 0;
        while (std::getline(ss, part, ',') && i < 5) {
            try {
                *slots[i++] = std::stod(part);
            } catch (const std::exception&) {
                std::cerr << "bad --weights component '" << part << "'\n";
                return 2;
            }
        }
        if (i != 5 || !w.valid()) {
            std::cerr << "--weights needs five nonnegative values summing to 1\n";
            return 2;
        }
        overrides.weights = w;
    }

    RunOutcome outcome;
    try {
        outcome = run_scenario(*loaded.scenario, overrides);
    } catch (const std::exception& e) {
        std::cerr << "internal failure: " << e.what() << "\n";
        return 3;
    }

    fs::path dir = trace_dir.empty() ? fs::path("acnbp_out") / loaded.scenario->name
                                     : fs::path(trace_dir);
    fs::create_directories(dir);
    std::ofstream(dir / "report.json", std::ios::binary) << canonical::encode(outcome.report);
    std::ofstream(dir / "trace.jsonl", std::ios::binary) << outcome.trace;
    std::ofstream(dir / "registry_snapshot.json", std::ios::binary)
        << canonical::encode(outcome.registry_snapshot);
    for (const auto& [name, log] : outcome.audits) {
        log.save(dir / ("audit_" + name + ".log"));
    }

    const json& r = outcome.report;
    std::cout << "scenario: " << r["scenario"].get<std::string>() << " (seed "
              << r["seed"].get<std::uint64_t>() << ")\n";
    if (r.contains("cps")) {
        std::cout << "ranking:";
        for (const auto& name : r["cps"]["ranking"]) std::cout << " " << name.get<std::string>();
        std::cout << "\n";
        for (const auto& [name, reason] : r["cps"]["eliminated"].items()) {
            std::cout << "eliminated: " << name << " (" << reason.get<std::string>() << ")\n";
        }
    }
    if (r.contains("selected")) {
        std::cout << "selected: " << (r["selected"].is_null() ? "-" : r["selected"].get<std::string>())
                  << "  decision: "
                  << (r["decision"].is_null() ? "-" : r["decision"].get<std::string>()) << "\n";
    }
    std::cout << "terminal phases:";
    for (const auto& [name, phase] : r["terminal_phases"].items()) {
        std::cout << " " << name << "=" << phase.get<std::string>();
    }
    std::cout << "\n";
    const json& st = r["stats"];
    std::cout << "bus: sent " << st["sent"] << ", delivered " << st["delivered"] << ", dropped "
              << st["dropped"] << ", tampered " << st["tampered"] << "\n";
    const json& rp = r["replays"];
    if (rp["injected"].get<std::uint64_t>() > 0) {
        std::cout << "adversary injections: " << rp["injected"] << " (accepted " << rp["accepted"]
                  << ", state changes " << rp["state_changes"] << ")\n";
    }
    if (r.contains("flood")) {
        std::cout << "flood: " << canonical::encode(r["flood"]) << "\n";
    }
    std::cout << "outputs: " << dir.string() << "\n";

    for (const auto& b : outcome.invariant_breaches) std::cout << "INVARIANT BREACH: " << b << "\n";
    for (const auto& m : outcome.mismatches) std::cout << "MISMATCH: " << m << "\n";
    if (check && outcome.mismatches.empty() && outcome.invariant_breaches.empty()) {
        std::cout << "all expected outcomes hold\n";
    }
    return outcome.exit_code;
}

int cmd_verify_audit(const std::string& path) {
    auto log = AuditLog::load(path);
    if (!log.ok()) {
        std::cerr << "cannot load audit log: " << log.error().message() << "\n";
        return 2;
    }
    ChainCheck check = log->verify();
    if (check.ok) {
        std::cout << "OK records=" << log->size() << " head=" << hex_encode(log->head()) << "\n";
        return 0;
    }
    std::cout << "BROKEN first_bad_index=" << check.first_bad_index << "\n";
    return 1;
}

int cmd_inspect_anri(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        std::cerr << "cannot open " << path << "\n";
        return 2;
    }
    json snap = json::parse(in, nullptr, false);
    if (snap.is_discarded() || !snap.is_object() || !snap.contains("records")) {
        std::cerr << "not a registry snapshot\n";
        return 2;
    }
    Bytes ca_root;
    try {
        ca_root = hex_decode(snap.at("ca_root").get<std::string>());
    } catch (const std::exception& e) {
        std::cerr << "bad ca_root: " << e.what() << "\n";
        return 2;
    }
    int bad = 0;
    for (const auto& rec : snap["records"]) {
        Anri anri;
        try {
            anri = rec.get<Anri>();
        } catch (const std::exception& e) {
            std::cerr << "undecodable record: " << e.what() << "\n";
            ++bad;
            continue;
        }
        bool ok = verify_anri(anri, ca_root);
        if (!ok) ++bad;
        std::cout << (ok ? "  ok  " : " BAD  ") << anri.id.name << "@" << anri.id.ns
                  << "  caps=" << anri.capabilities.size()
                  << "  reputation=" << anri.metadata.reputation_or_default()
                  << "  cost=" << anri.metadata.cost_per_unit.value_or(0.0)
                  << "  ttl_ms=" << anri.metadata.ttl_ms << "\n";
    }
    std::cout << snap["records"].size() << " records, " << bad << " failing verification\n";
    return bad == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ACNBP scenario runner"};
    app.require_subcommand(1);

    std::string scenario_path, weights_csv, trace_dir, audit_path, snapshot_path;
    std::optional<std::uint64_t> seed;
    bool assert_expected = false;

    auto* run = app.add_subcommand("run", "execute a scenario file");
    run->add_option("scenario", scenario_path, "path to the .scenario file")->required();
    run->add_option("--seed", seed, "override the simulation seed");
    run->add_option("--weights", weights_csv, "CPS weights a,b,c,d,e (sum 1)");
    run->add_flag("--assert", assert_expected, "check the scenario's expected outcomes");
    run->add_option("--trace-dir", trace_dir, "directory for report/trace/audit outputs");

    auto* verify = app.add_subcommand("verify-audit", "verify a hash-chained audit log");
    verify->add_option("log", audit_path, "audit log file")->required();

    auto* inspect = app.add_subcommand("inspect-anri", "list and verify a registry snapshot");
    inspect->add_option("snapshot", snapshot_path, "registry snapshot file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(scenario_path, seed, weights_csv, assert_expected, trace_dir);
        if (verify->parsed()) return cmd_verify_audit(audit_path);
        if (inspect->parsed()) return cmd_inspect_anri(snapshot_path);
    } catch (const std::exception& e) {
        std::cerr << "internal failure: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
