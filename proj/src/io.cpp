#include "mdev/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mdev {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void append_le64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_le32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    append_le64(out, bits);
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw std::runtime_error("ensemble file truncated");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
        pos += 8;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
        pos += 4;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(line_no) +
                                        ": expected `key = value`, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("line " + std::to_string(line_no) + ": empty key");
        out.emplace_back(key, value);
    }
    return out;
}

std::string find_key(const KeyValues& kv, const std::string& key, const std::string& fallback) {
    for (const auto& [k, v] : kv)
        if (k == key) return v;
    return fallback;
}

bool has_key(const KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return true;
    return false;
}

Vec parse_vector(const std::string& text) {
    Vec out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) throw std::invalid_argument("empty vector entry in '" + text + "'");
        std::size_t used = 0;
        out.push_back(std::stod(item, &used));
        if (used != item.size())
            throw std::invalid_argument("bad numeric entry '" + item + "'");
    }
    if (out.empty()) throw std::invalid_argument("empty vector literal");
    return out;
}

Matrix parse_matrix(const std::string& text) {
    std::vector<Vec> rows;
    std::istringstream in(text);
    std::string row;
    while (std::getline(in, row, ';')) rows.push_back(parse_vector(row));
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols) throw std::invalid_argument("ragged matrix literal");
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

std::string format_vector(const Vec& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

std::string format_matrix(const Matrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (i) out += ";";
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ",";
            out += format_double(m(i, j));
        }
    }
    return out;
}

std::uint64_t fnv1a_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

DiffusionScenario scenario_from_key_values(const KeyValues& kv) {
    static const std::set<std::string> known{
        "label", "dim", "kappa", "x0", "drift", "theta", "cubic_scale", "A",
        "diffusion", "B", "sigma_scale", "observable", "index", "Gamma", "offset",
        "contraction"};
    for (const auto& [k, v] : kv)
        if (!known.count(k))
            throw std::invalid_argument("scenario file: unknown key '" + k + "'");

    DiffusionScenario s;
    s.label = find_key(kv, "label", "scenario");
    const std::size_t d = static_cast<std::size_t>(std::stoul(find_key(kv, "dim", "1")));
    s.dimension = d;
    s.kappa = std::stod(find_key(kv, "kappa", "0.6"));
    s.initial_point = has_key(kv, "x0") ? parse_vector(find_key(kv, "x0", "")) : Vec(d, 0.0);

    // drift registry
    const std::string drift = find_key(kv, "drift", "linear");
    Matrix a_matrix;
    bool drift_linear = false;
    if (drift == "linear") {
        if (!has_key(kv, "A")) throw std::invalid_argument("scenario file: drift=linear needs A");
        a_matrix = parse_matrix(find_key(kv, "A", ""));
        if (a_matrix.rows() != d || a_matrix.cols() != d)
            throw std::invalid_argument("scenario file: A must be dim x dim");
        s.drift = [a_matrix](const Vec& x) { return a_matrix * x; };
        drift_linear = true;
    } else if (drift == "ou") {
        const double theta = std::stod(find_key(kv, "theta", "1"));
        a_matrix = Matrix(d, d);
        for (std::size_t i = 0; i < d; ++i) a_matrix(i, i) = -theta;
        s.drift = [theta](const Vec& x) {
            Vec out = x;
            for (double& v : out) v *= -theta;
            return out;
        };
        drift_linear = true;
    } else if (drift == "cubic") {
        if (d != 1) throw std::invalid_argument("scenario file: drift=cubic needs dim 1");
        const double scale = std::stod(find_key(kv, "cubic_scale", "1"));
        s.drift = [scale](const Vec& x) { return Vec{-scale * x[0] * x[0] * x[0]}; };
        s.superlinear_drift = true;
    } else {
        throw std::invalid_argument("scenario file: unknown drift '" + drift +
                                    "'; available: linear, ou, cubic");
    }

    // diffusion registry
    const std::string diffusion = find_key(kv, "diffusion", "identity");
    Matrix b_matrix;
    if (diffusion == "constant") {
        if (!has_key(kv, "B")) throw std::invalid_argument("scenario file: diffusion=constant needs B");
        b_matrix = parse_matrix(find_key(kv, "B", ""));
        if (b_matrix.rows() != d) throw std::invalid_argument("scenario file: B row count mismatch");
    } else if (diffusion == "identity") {
        const double scale = std::stod(find_key(kv, "sigma_scale", "1"));
        b_matrix = Matrix(d, d);
        for (std::size_t i = 0; i < d; ++i) b_matrix(i, i) = scale;
    } else {
        throw std::invalid_argument("scenario file: unknown diffusion '" + diffusion +
                                    "'; available: constant, identity");
    }
    s.noise_dimension = b_matrix.cols();
    s.diffusion = [b_matrix](const Vec&) { return b_matrix; };
    if (drift_linear) s.linear_part = LinearPart{a_matrix, b_matrix};

    // observable registry
    const std::string observable = find_key(kv, "observable", "identity");
    if (observable == "identity") {
        s.observable_dim = d;
        s.observable = [](const Vec& x) { return x; };
        if (drift_linear) s.linear_observable = Matrix::identity(d);
    } else if (observable == "component") {
        const std::size_t index = static_cast<std::size_t>(std::stoul(find_key(kv, "index", "0")));
        if (index >= d) throw std::invalid_argument("scenario file: component index out of range");
        s.observable_dim = 1;
        s.observable = [index](const Vec& x) { return Vec{x[index]}; };
        if (drift_linear) {
            Matrix c(1, d);
            c(0, index) = 1.0;
            s.linear_observable = c;
        }
    } else if (observable == "cubic") {
        if (d != 1) throw std::invalid_argument("scenario file: observable=cubic needs dim 1");
        s.observable_dim = 1;
        s.observable = [](const Vec& x) { return Vec{x[0] * x[0] * x[0]}; };
    } else if (observable == "sign") {
        if (d != 1) throw std::invalid_argument("scenario file: observable=sign needs dim 1");
        s.observable_dim = 1;
        s.observable = [](const Vec& x) {
            return Vec{x[0] > 0 ? 1.0 : (x[0] < 0 ? -1.0 : 0.0)};
        };
    } else if (observable == "quadratic_form" || observable == "quadratic_centered") {
        Matrix gamma;
        if (observable == "quadratic_centered") {
            if (d != 1)
                throw std::invalid_argument("scenario file: observable=quadratic_centered needs dim 1");
            gamma = Matrix(1, 1, {1.0});
        } else {
            if (!has_key(kv, "Gamma"))
                throw std::invalid_argument("scenario file: observable=quadratic_form needs Gamma");
            gamma = parse_matrix(find_key(kv, "Gamma", ""));
            if (gamma.rows() != d || gamma.cols() != d)
                throw std::invalid_argument("scenario file: Gamma must be dim x dim");
        }
        double offset;
        const std::string offset_text = find_key(kv, "offset", "auto");
        if (offset_text == "auto") {
            if (!s.linear_part)
                throw std::invalid_argument(
                    "scenario file: offset=auto needs a linear drift (offset = tr(Gamma P))");
            const Matrix p =
                solve_lyapunov(s.linear_part->a, s.linear_part->b * s.linear_part->b.transposed());
            offset = (gamma * p).trace();
        } else {
            offset = std::stod(offset_text);
        }
        s.observable_dim = 1;
        s.observable = [gamma, offset](const Vec& x) { return Vec{dot(x, gamma * x) - offset}; };
        s.observable_gamma = gamma;
        s.observable_offset = offset;
    } else {
        throw std::invalid_argument(
            "scenario file: unknown observable '" + observable +
            "'; available: identity, component, cubic, sign, quadratic_form, quadratic_centered");
    }

    if (has_key(kv, "contraction")) s.contraction = parse_matrix(find_key(kv, "contraction", ""));

    if (drift_linear) {
        s.required_assumptions = {"A_hurwitz", "A_B"};
        if (s.observable_gamma) s.required_assumptions = {"A_hurwitz", "A_BB_positive"};
    } else {
        s.required_assumptions = {"A_b", "A_sigma_a"};
    }
    s.validate();
    return s;
}

DiffusionScenario load_scenario(const std::string& name_or_path) {
    for (const auto& name : builtin_scenario_names())
        if (name == name_or_path) return builtin_scenario(name);
    if (!std::filesystem::exists(name_or_path))
        throw std::invalid_argument("unknown scenario '" + name_or_path +
                                    "' (not a builtin, not a file)");
    return scenario_from_key_values(parse_key_values(read_text(name_or_path)));
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

namespace {

std::string comment_block(const std::string& header_comment) {
    if (header_comment.empty()) return "";
    std::string out;
    std::istringstream in(header_comment);
    std::string line;
    while (std::getline(in, line)) out += "# " + line + "\n";
    return out;
}

}  // namespace

std::string curve_csv(const MdpCurve& curve, const std::string& header_comment) {
    std::string out = comment_block(header_comment);
    out += "t,k,N,p_hat,rho_log_p,se_log,clamped,reference\n";
    for (const auto& row : curve.rows) {
        out += format_double(row.t) + "," + std::to_string(row.exceed_count) + "," +
               std::to_string(row.paths) + "," + format_double(row.p_hat) + "," +
               format_double(row.rho_log_p) + "," + format_double(row.se_log) + "," +
               (row.clamped ? "1" : "0") + "," + format_double(curve.reference) + "\n";
    }
    return out;
}

std::string ensemble_csv(const PathEnsemble& ensemble, const std::string& header_comment) {
    std::string out = comment_block(header_comment);
    out += "path_id,t,field,component,value\n";
    const std::size_t n_ck = ensemble.checkpoints.size();
    for (std::size_t p = 0; p < ensemble.paths; ++p)
        for (std::size_t k = 0; k < n_ck; ++k) {
            const std::string t = format_double(ensemble.checkpoints[k]);
            for (std::size_t c = 0; c < ensemble.q; ++c) {
                const std::string comp = std::to_string(c);
                out += std::to_string(p) + "," + t + ",s_kappa," + comp + "," +
                       format_double(ensemble.s_at(p, k, c)) + "\n";
                out += std::to_string(p) + "," + t + ",corrector," + comp + "," +
                       format_double(ensemble.corrector_at(p, k, c)) + "\n";
                out += std::to_string(p) + "," + t + ",martingale," + comp + "," +
                       format_double(ensemble.martingale_at(p, k, c)) + "\n";
            }
            for (std::size_t c = 0; c < ensemble.q; ++c)
                for (std::size_t e = 0; e < ensemble.q; ++e)
                    out += std::to_string(p) + "," + t + ",bracket," + std::to_string(c) + "_" +
                           std::to_string(e) + "," +
                           format_double(ensemble.bracket_at(p, k, c, e)) + "\n";
            if (ensemble.has_lyapunov) {
                out += std::to_string(p) + "," + t + ",lyapunov,0," +
                       format_double(ensemble.lyap_value[p * n_ck + k]) + "\n";
                out += std::to_string(p) + "," + t + ",lyapunov_integral,0," +
                       format_double(ensemble.lyap_integral[p * n_ck + k]) + "\n";
            }
        }
    return out;
}

std::string corrector_csv(const TabulatedCorrector1d& table, const std::string& header_comment) {
    std::string out = comment_block(header_comment);
    const std::size_t q = table.u.size();
    out += "x";
    for (std::size_t c = 0; c < q; ++c) {
        const std::string suffix = q == 1 ? "" : std::to_string(c);
        out += ",U" + suffix + ",dU" + suffix;
    }
    out += "\n";
    for (std::size_t i = 0; i < table.size(); ++i) {
        out += format_double(table.x_at(i));
        for (std::size_t c = 0; c < q; ++c)
            out += "," + format_double(table.u[c][i]) + "," + format_double(table.du[c][i]);
        out += "\n";
    }
    return out;
}

void write_ensemble_binary(const std::string& path, const PathEnsemble& ensemble,
                           std::uint64_t config_hash) {
    std::string out;
    out.reserve(64 + ensemble.s_kappa.size() * 8 * 4);
    out += "MDEVENS1";
    append_le32(out, 1u);
    append_le32(out, ensemble.has_lyapunov ? 1u : 0u);
    append_le64(out, config_hash);
    append_le64(out, ensemble.config.seed);
    append_le64(out, ensemble.paths);
    append_le32(out, static_cast<std::uint32_t>(ensemble.checkpoints.size()));
    append_le32(out, static_cast<std::uint32_t>(ensemble.q));
    append_f64(out, ensemble.kappa);
    for (double t : ensemble.checkpoints) append_f64(out, t);

    const std::size_t n_ck = ensemble.checkpoints.size();
    for (std::size_t p = 0; p < ensemble.paths; ++p)
        for (std::size_t k = 0; k < n_ck; ++k) {
            for (std::size_t c = 0; c < ensemble.q; ++c) append_f64(out, ensemble.s_at(p, k, c));
            for (std::size_t c = 0; c < ensemble.q; ++c)
                append_f64(out, ensemble.corrector_at(p, k, c));
            for (std::size_t c = 0; c < ensemble.q; ++c)
                append_f64(out, ensemble.martingale_at(p, k, c));
            for (std::size_t c = 0; c < ensemble.q; ++c)
                for (std::size_t e = 0; e < ensemble.q; ++e)
                    append_f64(out, ensemble.bracket_at(p, k, c, e));
            if (ensemble.has_lyapunov) {
                append_f64(out, ensemble.lyap_value[p * n_ck + k]);
                append_f64(out, ensemble.lyap_integral[p * n_ck + k]);
            }
        }
    write_text_atomic(path, out);
}

BinaryEnsemble read_ensemble_binary(const std::string& path) {
    const std::string data = read_text(path);
    if (data.size() < 8 || data.compare(0, 8, "MDEVENS1") != 0)
        throw std::runtime_error("not an ensemble file (bad magic): " + path);
    Reader r{data, 8};
    const std::uint32_t version = r.u32();
    if (version != 1) throw std::runtime_error("unsupported ensemble version");
    const std::uint32_t flags = r.u32();

    BinaryEnsemble out;
    out.config_hash = r.u64();
    PathEnsemble& e = out.ensemble;
    e.config.seed = r.u64();
    e.paths = r.u64();
    const std::uint32_t n_ck = r.u32();
    e.q = r.u32();
    e.kappa = r.f64();
    e.checkpoints.resize(n_ck);
    for (auto& t : e.checkpoints) t = r.f64();
    e.has_lyapunov = (flags & 1u) != 0;

    const std::size_t rows = e.paths * n_ck;
    e.s_kappa.resize(rows * e.q);
    e.corrector_term.resize(rows * e.q);
    e.martingale.resize(rows * e.q);
    e.bracket.resize(rows * e.q * e.q);
    if (e.has_lyapunov) {
        e.lyap_value.resize(rows);
        e.lyap_integral.resize(rows);
    }
    for (std::size_t p = 0; p < e.paths; ++p)
        for (std::size_t k = 0; k < n_ck; ++k) {
            const std::size_t row = p * n_ck + k;
            for (std::size_t c = 0; c < e.q; ++c) e.s_kappa[row * e.q + c] = r.f64();
            for (std::size_t c = 0; c < e.q; ++c) e.corrector_term[row * e.q + c] = r.f64();
            for (std::size_t c = 0; c < e.q; ++c) e.martingale[row * e.q + c] = r.f64();
            for (std::size_t ce = 0; ce < e.q * e.q; ++ce)
                e.bracket[row * e.q * e.q + ce] = r.f64();
            if (e.has_lyapunov) {
                e.lyap_value[row] = r.f64();
                e.lyap_integral[row] = r.f64();
            }
        }
    return out;
}

}  // namespace mdev
