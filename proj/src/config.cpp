#include "nestsvd/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <vector>

#include "nestsvd/eval.hpp"
#include "nestsvd/linalg.hpp"
#include "nestsvd/random.hpp"

namespace nestsvd {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& pointer, const std::string& message) { throw ConfigError(pointer, message); }

std::string escape_token(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else out += c;
    }
    return out;
}

std::string quoted(const std::vector<std::string>& names) {
    std::string out;
    for (std::size_t k = 0; k < names.size(); ++k) out += (k ? ", \"" : "\"") + names[k] + "\"";
    return out;
}

/// One JSON object under validation. Accessors record the keys they consume and
/// write the resolved value to `out`; finish() rejects whatever was not consumed.
class Section {
public:
    Section(const Json& in, std::string pointer) : in_(in), ptr_(std::move(pointer)) {
        if (!in_.is_object()) fail(ptr_, std::string("expected an object, found ") + in_.type_name());
    }

    std::string at(const std::string& key) const { return ptr_ + "/" + escape_token(key); }

    const Json* find(const std::string& key) {
        used_.insert(key);
        const auto it = in_.find(key);
        return it == in_.end() || it->is_null() ? nullptr : &*it;
    }

    const Json& require(const std::string& key) {
        const Json* v = find(key);
        if (!v) fail(at(key), "required key is missing");
        return *v;
    }

    double real(const std::string& key, std::optional<double> fallback, double lo = -kInf, double hi = kInf,
                bool open_lo = false, bool open_hi = false) {
        const Json* v = find(key);
        double x = 0;
        if (!v) {
            if (!fallback) fail(at(key), "required key is missing");
            x = *fallback;
        } else {
            if (!v->is_number()) fail(at(key), std::string("expected a number, found ") + v->type_name());
            x = v->get<double>();
            if (!std::isfinite(x)) fail(at(key), "must be finite");
            const bool below = open_lo ? !(x > lo) : !(x >= lo);
            const bool above = open_hi ? !(x < hi) : !(x <= hi);
            if (below || above) {
                std::ostringstream os;
                os << "must lie in " << (open_lo ? '(' : '[') << lo << ", " << hi << (open_hi ? ')' : ']')
                   << ", got " << x;
                fail(at(key), os.str());
            }
        }
        out[key] = x;
        return x;
    }

    double positive(const std::string& key, std::optional<double> fallback) {
        return real(key, fallback, 0, kInf, true, false);
    }

    Index integer(const std::string& key, std::optional<Index> fallback, Index lo,
                  Index hi = std::numeric_limits<Index>::max()) {
        const Json* v = find(key);
        Index x = 0;
        if (!v) {
            if (!fallback) fail(at(key), "required key is missing");
            x = *fallback;
        } else {
            x = as_integer(*v, at(key));
            if (x < lo || x > hi) {
                std::ostringstream os;
                os << "must lie in [" << lo << ", " << hi << "], got " << x;
                fail(at(key), os.str());
            }
        }
        out[key] = x;
        return x;
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
        const Json* v = find(key);
        std::uint64_t x = fallback;
        if (v) {
            if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0)) {
                fail(at(key), "expected a non-negative integer");
            }
            x = v->get<std::uint64_t>();
        }
        out[key] = x;
        return x;
    }

    bool flag(const std::string& key, bool fallback) {
        const Json* v = find(key);
        bool x = fallback;
        if (v) {
            if (!v->is_boolean()) fail(at(key), std::string("expected true or false, found ") + v->type_name());
            x = v->get<bool>();
        }
        out[key] = x;
        return x;
    }

    std::string choice(const std::string& key, std::optional<std::string> fallback,
                       const std::vector<std::string>& allowed) {
        const Json* v = find(key);
        std::string x;
        if (!v) {
            if (!fallback) fail(at(key), "required key is missing; expected one of " + quoted(allowed));
            x = *fallback;
        } else {
            if (!v->is_string()) fail(at(key), std::string("expected a string, found ") + v->type_name());
            x = v->get<std::string>();
            bool ok = false;
            for (const auto& a : allowed) ok = ok || a == x;
            if (!ok) fail(at(key), "\"" + x + "\" is not one of " + quoted(allowed));
        }
        out[key] = x;
        return x;
    }

    Vector reals(const std::string& key, std::optional<Vector> fallback, Index size) {
        const Json* v = find(key);
        Vector x;
        if (!v) {
            if (!fallback) fail(at(key), "required key is missing");
            x = *fallback;
        } else {
            x = as_vector(*v, at(key));
            if (size >= 0 && x.size() != size) {
                fail(at(key), "expected " + std::to_string(size) + " entries, got " + std::to_string(x.size()));
            }
        }
        out[key] = std::vector<double>(x.data(), x.data() + x.size());
        return x;
    }

    void forbid(const std::string& key, const std::string& why) {
        used_.insert(key);
        if (in_.contains(key) && !in_.at(key).is_null()) fail(at(key), why);
    }

    void finish() const {
        for (const auto& item : in_.items()) {
            if (!used_.count(item.key())) fail(at(item.key()), "unknown key");
        }
    }

    static Index as_integer(const Json& v, const std::string& pointer) {
        if (v.is_number_integer()) return v.get<Index>();
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<Index>(d);
        }
        fail(pointer, std::string("expected an integer, found ") + v.type_name());
    }

    static Vector as_vector(const Json& v, const std::string& pointer) {
        if (!v.is_array()) fail(pointer, std::string("expected an array of numbers, found ") + v.type_name());
        Vector x(static_cast<Index>(v.size()));
        for (std::size_t k = 0; k < v.size(); ++k) {
            const std::string p = pointer + "/" + std::to_string(k);
            if (!v[k].is_number()) fail(p, std::string("expected a number, found ") + v[k].type_name());
            x(static_cast<Index>(k)) = v[k].get<double>();
            if (!std::isfinite(x(static_cast<Index>(k)))) fail(p, "must be finite");
        }
        return x;
    }

    Json out = Json::object();

private:
    static constexpr double kInf = std::numeric_limits<double>::infinity();
    const Json& in_;
    std::string ptr_;
    std::set<std::string> used_;
};

Matrix json_matrix(const Json& v, const std::string& pointer) {
    if (!v.is_array() || v.empty()) fail(pointer, "expected a non-empty array of rows");
    const Index rows = static_cast<Index>(v.size());
    Index cols = -1;
    Matrix m;
    for (Index i = 0; i < rows; ++i) {
        const std::string p = pointer + "/" + std::to_string(i);
        const Vector row = Section::as_vector(v[static_cast<std::size_t>(i)], p);
        if (cols < 0) {
            cols = row.size();
            if (cols == 0) fail(p, "rows must not be empty");
            m.resize(rows, cols);
        } else if (row.size() != cols) {
            fail(p, "row has " + std::to_string(row.size()) + " entries, expected " + std::to_string(cols));
        }
        m.row(i) = row.transpose();
    }
    return m;
}

Json matrix_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Comma- or whitespace-separated numbers, one matrix row per line; blank lines
/// and lines starting with '#' are skipped.
Matrix read_numeric_csv(const fs::path& path, const std::string& pointer) {
    std::ifstream in(path);
    if (!in) fail(pointer, "cannot open data file '" + path.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        for (char& c : line) {
            if (c == ',' || c == ';' || c == '\r') c = ' ';
        }
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        std::vector<double> row;
        std::string tok;
        while (ls >> tok) {
            std::size_t used = 0;
            double x = 0;
            try {
                x = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tok.size() || !std::isfinite(x)) {
                fail(pointer, path.string() + ":" + std::to_string(lineno) + ": not a finite number: '" + tok + "'");
            }
            row.push_back(x);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            fail(pointer, path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(rows.front().size()) + " columns, got " + std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(pointer, "data file '" + path.string() + "' holds no rows");
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
    return m;
}

void check_oracle_size(const Matrix& m, const std::string& pointer) {
    if (m.rows() > linalg::kMaxOracleDim || m.cols() > linalg::kMaxOracleDim) {
        fail(pointer, std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + " exceeds the " +
                          std::to_string(linalg::kMaxOracleDim) + "x" + std::to_string(linalg::kMaxOracleDim) + " oracle limit");
    }
}

struct ProblemInfo {
    std::string type;
    bool self_adjoint = true;
    bool continuous = false;
    Index x_domain = 0;  // f-side domain size of discrete problems
    Index y_domain = 0;
    Index max_modes = 0;
};

/// Exactly one of an inline array, a data file, or a seeded random spec.
Matrix matrix_source(Section& s, const std::string& inline_key, const fs::path& base_dir,
                     const std::function<Matrix(Section&)>& random) {
    const bool has_inline = s.find(inline_key) != nullptr;
    const bool has_file = s.find("file") != nullptr;
    const bool has_random = s.find("random") != nullptr;
    if (int(has_inline) + int(has_file) + int(has_random) != 1) {
        fail(s.at(inline_key), "give exactly one of \"" + inline_key + "\", \"file\" or \"random\"");
    }
    if (has_inline) return json_matrix(s.require(inline_key), s.at(inline_key));
    if (has_file) {
        const Json& f = s.require("file");
        if (!f.is_string()) fail(s.at("file"), "expected a path string");
        fs::path path = f.get<std::string>();
        if (path.is_relative()) path = base_dir / path;
        return read_numeric_csv(path, s.at("file"));
    }
    Section r(s.require("random"), s.at("random"));
    Matrix m = random(r);
    r.finish();
    return m;
}

ProblemInfo resolve_problem(Section& s, const fs::path& base_dir) {
    ProblemInfo info;
    info.type = s.choice("type", std::nullopt, {"matrix", "hydrogen2d", "oscillator2d", "discrete_cdk"});
    if (info.type == "matrix") {
        const bool self_adjoint = s.flag("self_adjoint", false);
        Matrix a = matrix_source(s, "matrix", base_dir, [&](Section& r) {
            const Index rows = r.integer("rows", std::nullopt, 1, linalg::kMaxOracleDim);
            const Index cols = r.integer("cols", std::nullopt, 1, linalg::kMaxOracleDim);
            Rng rng = make_stream(r.seed("seed", 0), "problem");
            Matrix b = gaussian_matrix(rows, cols, rng);
            if (!self_adjoint) return b;
            if (rows != cols) fail(r.at("cols"), "a self-adjoint random matrix must be square");
            return Matrix(b * b.transpose() / static_cast<double>(cols));
        });
        check_oracle_size(a, s.at("matrix"));
        if (!a.allFinite()) fail(s.at("matrix"), "entries must be finite");
        if (self_adjoint) {
            if (a.rows() != a.cols()) fail(s.at("matrix"), "a self-adjoint problem needs a square matrix");
            const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
            if (asym > 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff())) {
                fail(s.at("matrix"), "a self-adjoint problem needs a symmetric matrix (asymmetry " +
                                         std::to_string(asym) + ")");
            }
        }
        s.out["matrix"] = matrix_json(a);
        s.out.erase("file");
        s.out.erase("random");
        info.self_adjoint = self_adjoint;
        info.x_domain = a.cols();
        info.y_domain = self_adjoint ? 0 : a.rows();
        info.max_modes = std::min(a.rows(), a.cols());
    } else if (info.type == "discrete_cdk") {
        Matrix pmf = matrix_source(s, "pmf", base_dir, [&](Section& r) {
            const Index rows = r.integer("rows", std::nullopt, 2, linalg::kMaxOracleDim);
            const Index cols = r.integer("cols", std::nullopt, 2, linalg::kMaxOracleDim);
            const double spread = r.positive("spread", 1.0);
            Rng rng = make_stream(r.seed("seed", 0), "problem");
            Matrix p = (spread * gaussian_matrix(rows, cols, rng)).array().exp().matrix();
            return Matrix(p / p.sum());
        });
        check_oracle_size(pmf, s.at("pmf"));
        if (pmf.rows() < 2 || pmf.cols() < 2) fail(s.at("pmf"), "needs at least 2 rows and 2 columns");
        if ((pmf.array() < 0).any()) fail(s.at("pmf"), "probabilities must be non-negative");
        if (std::abs(pmf.sum() - 1.0) > 1e-9) fail(s.at("pmf"), "probabilities must sum to 1 (sum " + std::to_string(pmf.sum()) + ")");
        if ((pmf.rowwise().sum().array() <= 0).any() || (pmf.colwise().sum().array() <= 0).any()) {
            fail(s.at("pmf"), "every marginal probability must be positive");
        }
        s.out["pmf"] = matrix_json(pmf);
        s.out.erase("file");
        s.out.erase("random");
        info.self_adjoint = false;
        info.x_domain = pmf.rows();
        info.y_domain = pmf.cols();
        info.max_modes = std::min(pmf.rows(), pmf.cols()) - 1;
    } else {
        info.continuous = true;
        info.max_modes = 256;
        s.positive("fd_epsilon", 0.01);
        s.positive("anomaly_threshold", 1e5);
        if (info.type == "hydrogen2d") s.real("shift", 0.0);
        else s.real("shift", std::nullopt);  // the useful range depends on the mode count
    }
    s.finish();
    return info;
}

Json resolve_model(const Json* raw, const std::string& pointer, const ProblemInfo& info) {
    const Json empty = Json::object();
    Section s(raw ? *raw : empty, pointer);
    if (!info.continuous) {
        s.choice("head_mode", "tabular", {"tabular"});
        for (const char* k : {"hidden_widths", "activation", "fourier"}) {
            s.forbid(k, "tabular models over a discrete domain take no network settings");
        }
        s.finish();
        return s.out;
    }
    s.choice("head_mode", "disjoint_heads", {"disjoint_heads", "shared_trunk"});
    Json widths = Json::array({128, 128});
    if (const Json* w = s.find("hidden_widths")) {
        if (!w->is_array()) fail(s.at("hidden_widths"), "expected an array of layer widths");
        widths = Json::array();
        for (std::size_t k = 0; k < w->size(); ++k) {
            const std::string p = s.at("hidden_widths") + "/" + std::to_string(k);
            const Index width = Section::as_integer((*w)[k], p);
            if (width < 1) fail(p, "layer widths must be positive");
            widths.push_back(width);
        }
    }
    s.out["hidden_widths"] = widths;
    if (s.choice("activation", "softplus", {"softplus", "sin_cos"}) == "sin_cos") {
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (widths[k].get<Index>() % 2 != 0) {
                fail(s.at("hidden_widths") + "/" + std::to_string(k), "sin_cos activation needs even widths");
            }
        }
    }
    const Json* f = s.find("fourier");
    if (raw && raw->contains("fourier") && raw->at("fourier").is_null()) {
        s.out["fourier"] = nullptr;
    } else {
        Section ff(f ? *f : empty, s.at("fourier"));
        ff.integer("features", 1024, 1, 1 << 20);
        ff.positive("scale", 0.1);
        ff.flag("append_raw_input", true);
        ff.finish();
        s.out["fourier"] = ff.out;
    }
    s.finish();
    return s.out;
}

Json resolve_sampler(const Json* raw, const std::string& pointer, const ProblemInfo& info, bool eval) {
    const Json empty = Json::object();
    Section s(raw ? *raw : empty, pointer);
    if (!info.continuous) {
        std::vector<std::string> allowed;
        if (eval) allowed = {"full_population"};
        else if (info.type == "matrix") allowed = {"full_population", "indices"};
        else allowed = {"joint_pairs"};
        s.choice("type", allowed.front(), allowed);
        s.finish();
        return s.out;
    }
    const bool hydrogen = info.type == "hydrogen2d";
    const std::string type = s.choice("type", eval ? "uniform_box" : "gaussian", {"gaussian", "uniform_box"});
    if (type == "gaussian") {
        s.reals("mean", Vector::Zero(2), 2);
        const Vector sd = s.reals("std", Vector::Constant(2, hydrogen ? 16.0 : 4.0), 2);
        if (!(sd.array() > 0).all()) fail(s.at("std"), "standard deviations must be positive");
    } else {
        const double half = eval ? (hydrogen ? 100.0 : 5.0) : (hydrogen ? 40.0 : 8.0);
        const Vector lo = s.reals("lo", Vector::Constant(2, -half), 2);
        const Vector hi = s.reals("hi", Vector::Constant(2, half), 2);
        if (!(lo.array() < hi.array()).all()) fail(s.at("hi"), "each upper bound must exceed its lower bound");
    }
    s.finish();
    return s.out;
}

}  // namespace

std::optional<std::pair<int, int>> locate_json_pointer(const std::string& text, const std::string& pointer) {
    std::vector<std::string> target;
    if (!pointer.empty()) {
        std::size_t pos = 1;
        while (true) {
            const std::size_t next = pointer.find('/', pos);
            std::string token = pointer.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            std::string decoded;
            for (std::size_t k = 0; k < token.size(); ++k) {
                if (token[k] == '~' && k + 1 < token.size()) {
                    decoded += token[k + 1] == '1' ? '/' : '~';
                    ++k;
                } else {
                    decoded += token[k];
                }
            }
            target.push_back(decoded);
            if (next == std::string::npos) break;
            pos = next + 1;
        }
    }

    // A small tolerant scanner: tracks positions, never validates.
    struct Scanner {
        const std::string& s;
        const std::vector<std::string>& target;
        std::size_t i = 0;
        int line = 1, col = 1;
        std::size_t best_depth = 0;
        std::pair<int, int> best{1, 1};
        bool exact = false;

        bool done() const { return i >= s.size(); }
        void advance() {
            if (done()) return;
            if (s[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
            ++i;
        }
        void skip_ws() {
            while (!done() && std::isspace(static_cast<unsigned char>(s[i]))) advance();
        }
        std::string string_token() {
            std::string out;
            advance();  // opening quote
            while (!done() && s[i] != '"') {
                if (s[i] == '\\') advance();
                if (!done()) out += s[i];
                advance();
            }
            advance();
            return out;
        }
        void value(std::size_t depth, bool on_path) {
            skip_ws();
            if (done()) return;
            if (on_path && depth >= best_depth) {
                best_depth = depth;
                best = {line, col};
                exact = exact || depth == target.size();
            }
            const bool descend = on_path && depth < target.size();
            if (s[i] == '{') {
                advance();
                while (true) {
                    skip_ws();
                    if (done() || s[i] == '}') break;
                    if (s[i] != '"') return;
                    const std::string key = string_token();
                    skip_ws();
                    if (!done() && s[i] == ':') advance();
                    value(depth + 1, descend && target[depth] == key);
                    skip_ws();
                    if (!done() && s[i] == ',') advance();
                    else break;
                }
                advance();
            } else if (s[i] == '[') {
                advance();
                for (std::size_t k = 0;; ++k) {
                    skip_ws();
                    if (done() || s[i] == ']') break;
                    value(depth + 1, descend && target[depth] == std::to_string(k));
                    skip_ws();
                    if (!done() && s[i] == ',') advance();
                    else break;
                }
                advance();
            } else if (s[i] == '"') {
                string_token();
            } else {
                while (!done() && s[i] != ',' && s[i] != '}' && s[i] != ']' &&
                       !std::isspace(static_cast<unsigned char>(s[i]))) {
                    advance();
                }
            }
        }
    };
    Scanner sc{text, target};
    sc.value(0, true);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return std::nullopt;
    return sc.best;
}

Json parse_config_text(const std::string& text, const std::string& source_name) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        int line = 1, col = 1;
        const std::size_t stop = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t k = 0; k < stop; ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = e.what();
        const auto colon = what.find("syntax error");
        if (colon != std::string::npos) what = what.substr(colon);
        throw InputError(source_name + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
    }
}

Json resolve_config(const Json& raw, const fs::path& base_dir) {
    Section root(raw, "");
    Json out = Json::object();
    if (const Json* d = root.find("description")) {
        if (!d->is_string()) fail(root.at("description"), "expected a string");
        out["description"] = *d;
    }

    Section problem(root.require("problem"), root.at("problem"));
    const ProblemInfo info = resolve_problem(problem, base_dir);
    out["problem"] = problem.out;

    if (info.max_modes < 1) fail(root.at("problem"), "the problem has no nontrivial modes to learn");
    const Index modes = root.integer("modes", std::nullopt, 1, info.max_modes);
    out["modes"] = modes;

    out["model"] = resolve_model(root.find("model"), root.at("model"), info);

    {
        const Json empty = Json::object();
        const Json* m = root.find("masks");
        Section s(m ? *m : empty, root.at("masks"));
        const std::string type = s.choice("type", "joint", {"joint", "sequential", "none"});
        if (type == "joint") {
            const Vector w = s.reals("weights", Vector::Constant(modes, 1.0 / static_cast<double>(modes)), modes);
            for (Index k = 0; k < w.size(); ++k) {
                if (!(w(k) > 0)) fail(s.at("weights") + "/" + std::to_string(k), "joint weights must be positive");
            }
        } else {
            s.forbid("weights", "only joint masks take weights");
        }
        s.finish();
        out["masks"] = s.out;
    }

    const std::string method = root.choice("method", "nestedlora", {"nestedlora", "neuralef_unbiased"});
    if (method == "neuralef_unbiased" && !info.self_adjoint) {
        fail(root.at("method"), "neuralef_unbiased needs a self-adjoint problem");
    }
    out["method"] = method;

    bool full_population = false;
    {
        const Json empty = Json::object();
        const Json* t = root.find("train");
        Section s(t ? *t : empty, root.at("train"));
        s.integer("iterations", 1000, 0);
        const Json sampler = resolve_sampler(s.find("sampler"), s.at("sampler"), info, false);
        full_population = sampler["type"] == "full_population";
        if (full_population) {
            s.forbid("batch_size", "a full_population sampler uses every index; remove batch_size");
        } else {
            const Index b = s.integer("batch_size", 128, 4);
            if (b % 2 != 0) fail(s.at("batch_size"), "must be even so the batch splits into halves");
        }
        const Json empty_opt = Json::object();
        const Json* o = s.find("optimizer");
        Section opt(o ? *o : empty_opt, s.at("optimizer"));
        opt.choice("type", "rmsprop", {"rmsprop", "adam", "sgd_momentum"});
        opt.positive("lr", 1e-4);
        opt.real("alpha", 0.99, 0, 1, false, true);
        opt.positive("eps", 1e-8);
        opt.real("beta1", 0.9, 0, 1, false, true);
        opt.real("beta2", 0.999, 0, 1, false, true);
        opt.real("momentum", 0.0, 0, 1, false, true);
        opt.finish();
        s.out["optimizer"] = opt.out;
        s.choice("lr_schedule", "cosine", {"cosine", "constant"});
        s.real("ema_decay", 0.995, 0, 1, false, true);
        s.seed("seed", 0);
        s.integer("eval_every", 100, 1);
        s.real("max_skip_fraction", 0.01, 0, 1);
        s.out["sampler"] = sampler;
        s.finish();
        out["train"] = s.out;
    }

    {
        const Json empty = Json::object();
        const Json* e = root.find("eval");
        Section s(e ? *e : empty, root.at("eval"));
        s.out["sampler"] = resolve_sampler(s.find("sampler"), s.at("sampler"), info, true);
        if (info.continuous) s.integer("samples", 100000, 2);
        else s.forbid("samples", "discrete problems are evaluated on the full population");
        s.flag("use_ema", true);
        const Json* g = s.find("grouping");
        if (!g || (g->is_string() && g->get<std::string>() == "auto")) {
            s.out["grouping"] = "auto";
        } else {
            if (!g->is_array()) fail(s.at("grouping"), "expected \"auto\" or an array of mode-index groups");
            DegeneracyGrouping grouping;
            for (std::size_t k = 0; k < g->size(); ++k) {
                const std::string p = s.at("grouping") + "/" + std::to_string(k);
                if (!(*g)[k].is_array()) fail(p, "expected an array of 0-based mode indices");
                std::vector<Index> group;
                for (std::size_t j = 0; j < (*g)[k].size(); ++j) {
                    group.push_back(Section::as_integer((*g)[k][j], p + "/" + std::to_string(j)));
                }
                grouping.groups.push_back(group);
            }
            try {
                grouping.validate(modes);
            } catch (const InputError& err) {
                fail(s.at("grouping"), err.what());
            }
            s.out["grouping"] = *g;
        }
        const std::vector<std::string> all = {"eigenvalue_estimate", "relative_error", "angle_distance",
                                              "norm_spectrum", "subspace_distance", "orthogonality_error"};
        Json measures = Json::array();
        if (const Json* m = s.find("measures")) {
            if (!m->is_array()) fail(s.at("measures"), "expected an array of measure names");
            for (std::size_t k = 0; k < m->size(); ++k) {
                const std::string p = s.at("measures") + "/" + std::to_string(k);
                const Json& name = (*m)[k];
                bool ok = name.is_string();
                if (ok) {
                    ok = false;
                    for (const auto& a : all) ok = ok || a == name.get<std::string>();
                }
                if (!ok) fail(p, "expected one of " + quoted(all));
                measures.push_back(name);
            }
        } else {
            for (const auto& a : all) measures.push_back(a);
        }
        s.out["measures"] = measures;
        s.finish();
        out["eval"] = s.out;
    }

    {
        const Json empty = Json::object();
        const Json* gc = root.find("gradcheck");
        Section s(gc ? *gc : empty, root.at("gradcheck"));
        s.positive("epsilon", 1e-5);
        s.integer("coordinates", 24, 0);
        s.integer("directions", 4, 0);
        s.positive("tolerance", 1e-5);
        if (full_population) {
            s.forbid("batch_size", "a full_population sampler uses every index; remove batch_size");
        } else {
            const Index b = s.integer("batch_size", 16, 4);
            if (b % 2 != 0) fail(s.at("batch_size"), "must be even so the batch splits into halves");
        }
        s.flag("corrupt", false);
        s.finish();
        out["gradcheck"] = s.out;
    }

    {
        const Json empty = Json::object();
        const Json* o = root.find("oracle");
        Section s(o ? *o : empty, root.at("oracle"));
        if (info.continuous) {
            const double half = info.type == "hydrogen2d" ? 20.0 : 5.0;
            s.integer("grid_points", 101, 2, 4001);
            const Vector lo = s.reals("lo", Vector::Constant(2, -half), 2);
            const Vector hi = s.reals("hi", Vector::Constant(2, half), 2);
            if (!(lo.array() < hi.array()).all()) fail(s.at("hi"), "each upper bound must exceed its lower bound");
        }
        s.finish();
        out["oracle"] = s.out;
    }

    if (const Json* d = root.find("output_dir")) {
        if (!d->is_string() || d->get<std::string>().empty()) fail(root.at("output_dir"), "expected a directory path");
        out["output_dir"] = *d;
    } else {
        out["output_dir"] = "runs/" + info.type;
    }
    root.finish();
    return out;
}

Json load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path.string() + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const Json raw = parse_config_text(text, path.string());
    try {
        return resolve_config(raw, path.parent_path());
    } catch (const ConfigError& e) {
        const auto pos = locate_json_pointer(text, e.pointer());
        std::string where = path.string();
        if (pos) where += ":" + std::to_string(pos->first) + ":" + std::to_string(pos->second);
        throw InputError(where + ": " + e.what());
    }
}

}  // namespace nestsvd
