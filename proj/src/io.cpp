#include "logshe/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace logshe {

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto r = j.size();
    const auto c = r ? j.at(0).size() : 0;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (size_t i = 0; i < r; ++i)
        for (size_t k = 0; k < c; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j.at(i).at(k).get<double>();
    return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

} // namespace

void write_dataset_csv(const std::string& path, const Dataset& data) {
    std::ostringstream out;
    out << "y";
    for (int k = 1; k <= data.K(); ++k) out << ",z" << k;
    out << "\n";
    for (int i = 0; i < data.n(); ++i) {
        out << fmt(data.y()[i]);
        for (int k = 0; k < data.K(); ++k) out << "," << fmt(data.Z()(i, k));
        out << "\n";
    }
    write_file(path, out.str());
}

Dataset read_dataset_csv(const std::string& path, WeightMatrix W,
                         std::optional<WeightMatrix> W_star) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw validation_error("empty dataset file: " + path);
    int fields = 1;
    for (char ch : line)
        if (ch == ',') ++fields;
    const int K = fields - 1;
    if (K < 1) throw validation_error("dataset header must be y,z1..zK");

    std::vector<double> ys;
    std::vector<double> zs;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string tok;
        int col = 0;
        while (std::getline(ls, tok, ',')) {
            double val;
            try {
                val = std::stod(tok);
            } catch (const std::exception&) {
                throw validation_error("dataset line " + std::to_string(lineno) + ": bad number '" + tok + "'");
            }
            if (col == 0) ys.push_back(val);
            else zs.push_back(val);
            ++col;
        }
        if (col != fields)
            throw validation_error("dataset line " + std::to_string(lineno) + ": wrong field count");
    }
    const auto n = static_cast<Eigen::Index>(ys.size());
    Eigen::VectorXd y(n);
    Eigen::MatrixXd Z(n, K);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (ys[static_cast<size_t>(i)] == 0.0)
            throw validation_error("dataset row " + std::to_string(i + 2) + ": y is zero");
        y[i] = ys[static_cast<size_t>(i)];
        for (int k = 0; k < K; ++k) Z(i, k) = zs[static_cast<size_t>(i) * K + static_cast<size_t>(k)];
    }
    return Dataset(std::move(y), std::move(Z), std::move(W), std::move(W_star));
}

json dataset_to_json(const Dataset& data) {
    json j;
    j["y"] = vector_to_json(data.y());
    j["Z"] = matrix_to_json(data.Z());
    j["W"] = matrix_to_json(data.W().entries());
    if (data.W_star()) j["W_star"] = matrix_to_json(data.W_star()->entries());
    return j;
}

Dataset dataset_from_json(const json& j) {
    std::optional<WeightMatrix> ws;
    if (j.contains("W_star")) ws = WeightMatrix::from_standardized(matrix_from_json(j.at("W_star")));
    return Dataset(vector_from_json(j.at("y")), matrix_from_json(j.at("Z")),
                   WeightMatrix::from_standardized(matrix_from_json(j.at("W"))), std::move(ws));
}

json moment_set_to_json(const MomentSet& m) {
    return json{{"a_e", m.a_e},         {"b_e", m.b_e},
                {"c_e", m.c_e},         {"d_e", m.d_e},
                {"e_e", m.e_e},         {"f_e", m.f_e},
                {"sigma2", m.sigma2},   {"a_e_star", m.a_e_star},
                {"c_e_star", m.c_e_star}, {"d_e_star", m.d_e_star},
                {"f_e_star", m.f_e_star}, {"sigma_star2", m.sigma_star2},
                {"mu3", m.mu3},         {"mu4", m.mu4},
                {"mode", m.mode == MomentMode::Sample ? "sample" : "gaussian"}};
}

json ml_fit_to_json(const MLFit& fit) {
    json j;
    j["method"] = fit.method;
    j["theta"] = {{"rho", fit.theta_hat.rho}, {"gamma", vector_to_json(fit.theta_hat.gamma)}};
    j["loglik"] = fit.loglik;
    j["convergence"] = {{"converged", fit.converged},
                        {"iterations", fit.iterations},
                        {"score_norm", fit.score_norm_at_opt},
                        {"boundary_warning", fit.boundary_warning}};
    if (fit.covariance.size() > 0) {
        j["covariance"] = matrix_to_json(fit.covariance);
        j["se"] = vector_to_json(fit.standard_errors());
    }
    j["moments"] = moment_set_to_json(fit.moments);
    return j;
}

json gmm_fit_to_json(const GmmFit& fit) {
    json j;
    j["method"] = fit.method;
    j["theta"] = {{"rho", fit.theta_hat.rho}, {"gamma", vector_to_json(fit.theta_hat.gamma)}};
    j["objective"] = fit.objective;
    j["convergence"] = {{"converged", fit.converged}, {"iterations", fit.iterations}};
    if (fit.covariance.size() > 0) {
        j["covariance"] = matrix_to_json(fit.covariance);
        j["se"] = vector_to_json(fit.standard_errors());
    }
    j["moments"] = moment_set_to_json(fit.moments);
    j["instruments"] = {{"hash", hash_hex(fit.instrument_hash)},
                        {"weighting_hash", hash_hex(fit.weighting_hash)},
                        {"ridged", fit.ridged}};
    if (fit.constraint_cg > 0) j["constraint"] = fit.constraint_desc;
    if (fit.stage1) {
        j["stage1"] = {{"rho", fit.stage1->theta_hat.rho},
                       {"gamma", vector_to_json(fit.stage1->theta_hat.gamma)},
                       {"objective", fit.stage1->objective},
                       {"converged", fit.stage1->converged}};
    }
    return j;
}

json test_result_to_json(const TestResult& t) {
    return json{{"kind", t.kind},
                {"statistic", t.statistic},
                {"df", t.df},
                {"p_value", t.p_value},
                {"constraint", t.constraint},
                {"instrument_hash", hash_hex(t.instrument_hash)}};
}

void write_effects_csv(const std::string& path, const std::vector<std::string>& names,
                       const std::vector<EffectTriple>& effects) {
    if (names.size() != effects.size())
        throw validation_error("write_effects_csv: names/effects size mismatch");
    std::ostringstream out;
    out << "variable,ate,ade,aie\n";
    for (size_t i = 0; i < names.size(); ++i)
        out << names[i] << "," << fmt(effects[i].ate) << "," << fmt(effects[i].ade) << ","
            << fmt(effects[i].aie) << "\n";
    write_file(path, out.str());
}

std::uint64_t content_hash(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw numerical_error("cannot write file: " + path);
    out << content;
    if (!out) throw numerical_error("write failed: " + path);
}

} // namespace logshe
