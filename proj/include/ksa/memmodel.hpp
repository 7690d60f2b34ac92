#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ksa/masking.hpp"

namespace ksa {

enum class Mechanism { MHA, GQA, MLA, GDN, SWA, KSA, KSA_GQA, KSA_MLA };

Mechanism mechanism_from_string(const std::string& s);
const char* mechanism_name(Mechanism m);

// Shared parameter set for the closed-form per-layer cache cost formulas.
// Defaults are the reference configuration: k=8, h=128, d=128, g=8,
// d_c=512, d_r=64.
struct CostParams {
    double n = 0;      // sequence length (required per call)
    double h = 128;    // query heads
    double g = 8;      // kv head groups
    double d = 128;    // head dim
    double d_c = 512;  // latent dim
    double d_r = 64;   // decoupled rope dim
    double w = 0;      // SWA window
    double k = 8;      // summary chunk size
    bool gdn_per_head = true;  // keep the h factor in the GDN state size
};

struct CacheCostModel {
    Mechanism mechanism = Mechanism::MHA;
    CostParams params;
};

// Closed-form stored KV entry count for one layer (real-valued; n/k is not
// floored, matching the asymptotic forms). The pure-KSA mechanism compresses
// the token axis of an MHA layout, so its head factor is h; KSA_GQA is the
// g-headed combination.
double entries(const CacheCostModel& model);

// Compression rate versus an MHA baseline at the same n, h, d. Combined
// mechanisms are exact products of their component rates.
double compression_rate(const CacheCostModel& model);

struct CurveRow {
    double n;
    Mechanism mechanism;
    double entries;
    double bytes;
    double rate_vs_mha;  // literal entries ratio at this n
};

std::vector<CurveRow> curve(const std::vector<Mechanism>& mechanisms,
                            const std::vector<double>& n_values, const CostParams& params,
                            double bytes_per_element, std::size_t layers);

std::string curve_to_csv(const std::vector<CurveRow>& rows);

struct SimulationResult {
    double simulated_entries;  // slots per kv-head from the lifecycle counters
    double formula_entries;    // asymptotic n/k slots
    double delta;
    double bound;  // (C+1)*k + C, independent of n
};

// Cross-check of the closed form against the decode cache's own counters.
SimulationResult simulate_vs_formula(const KsaConfig& cfg, std::size_t n);

// Per-layer-summed cache bytes for a hybrid KSA:Full schedule, using the
// simulated KSA entry count for KSA layers and n slots for full layers.
double hybrid_simulated_bytes(const KsaConfig& cfg, std::size_t n, std::size_t layers,
                              std::size_t ratio, double g, double d,
                              double bytes_per_element);
double full_simulated_bytes(std::size_t n, std::size_t layers, double g, double d,
                            double bytes_per_element);

}  // namespace ksa
