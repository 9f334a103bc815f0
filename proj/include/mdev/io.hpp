#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mdev/corrector.hpp"
#include "mdev/mdp.hpp"
#include "mdev/sim.hpp"

namespace mdev {

/// Ordered key/value pairs from the structured text format: one `key = value`
/// per line, `#` comments, blank lines ignored.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
std::string find_key(const KeyValues& kv, const std::string& key, const std::string& fallback);
bool has_key(const KeyValues& kv, const std::string& key);

/// Vectors are comma-separated; matrices use `;` between rows.
Vec parse_vector(const std::string& text);
Matrix parse_matrix(const std::string& text);
std::string format_vector(const Vec& v);
std::string format_matrix(const Matrix& m);

/// FNV-1a 64-bit hash; used as the run-configuration fingerprint carried in
/// every output header.
std::uint64_t fnv1a_hash(const std::string& text);

/// Builds a scenario from a key/value block. Drift, diffusion and observable
/// come from a named registry of function forms plus parameter vectors;
/// arbitrary code is not parsed. Unknown keys are rejected.
DiffusionScenario scenario_from_key_values(const KeyValues& kv);
/// Builtin name or a path to a scenario file.
DiffusionScenario load_scenario(const std::string& name_or_path);

/// Write-then-rename so readers never observe partial files.
void write_text_atomic(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

/// Fixed plotting schema: t,k,N,p_hat,rho_log_p,se_log,clamped,reference.
/// `header_comment` lines are emitted first, each prefixed with '#'.
std::string curve_csv(const MdpCurve& curve, const std::string& header_comment);

/// Long-format ensemble dump: path_id,t,field,component,value.
std::string ensemble_csv(const PathEnsemble& ensemble, const std::string& header_comment);

/// Tabulated corrector export: x, then U and dU per component.
std::string corrector_csv(const TabulatedCorrector1d& table, const std::string& header_comment);

/// Compact binary ensemble dump. Layout (all little-endian):
///   bytes 0-7   magic "MDEVENS1"
///   u32 version (=1), u32 flags (bit 0: lyapunov block present)
///   u64 config hash, u64 seed, u64 paths, u32 checkpoints K, u32 q
///   f64 kappa, K x f64 checkpoint times
///   then per path, per checkpoint: q f64 S, q f64 corrector, q f64 M,
///   q*q f64 bracket, and with the lyapunov flag, f64 V and f64 int V^ell.
void write_ensemble_binary(const std::string& path, const PathEnsemble& ensemble,
                           std::uint64_t config_hash);
struct BinaryEnsemble {
    std::uint64_t config_hash = 0;
    PathEnsemble ensemble;
};
BinaryEnsemble read_ensemble_binary(const std::string& path);

}  // namespace mdev
