#include "cpetrunc/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "cpetrunc/errors.hpp"

namespace cpetrunc {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(delim, start);
        out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

bool parse_double(const std::string& text, double& value) {
    if (text.empty()) return false;
    const char* first = text.data();
    const char* last = first + text.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc() && ptr == last;
}

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

RawTable read_raw(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    RawTable raw;
    char delim = ',';
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (!have_header) {
            delim = line.find('\t') != std::string::npos ? '\t' : ',';
            raw.header = split(line, delim);
            have_header = true;
        } else {
            raw.rows.push_back(split(line, delim));
        }
    }
    if (!have_header) throw EmptyFile(path.string());
    return raw;
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw MissingColumn(name);
    return static_cast<std::size_t>(it - header.begin());
}

double cell_value(const RawTable& raw, std::size_t row, std::size_t col) {
    const auto& r = raw.rows[row];
    if (col >= r.size() || r[col].empty()) throw ParseError(row + 1, raw.header[col], "missing value");
    double v = 0.0;
    if (!parse_double(r[col], v)) throw ParseError(row + 1, raw.header[col], "not a number: '" + r[col] + "'");
    return v;
}

}  // namespace

ColumnMap ColumnMap::parse(const std::string& text) {
    ColumnMap map;
    if (trim(text).empty()) return map;
    for (const auto& item : split(text, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw InvalidArgument("column map entry '" + item + "' is not key=name");
        auto key = trim(item.substr(0, eq));
        auto value = trim(item.substr(eq + 1));
        if (value.empty()) throw InvalidArgument("column map entry '" + item + "' has an empty name");
        if (key == "x") map.x = value;
        else if (key == "y") map.y = value;
        else if (key == "response") map.response = value;
        else throw InvalidArgument("unknown column map key '" + key + "' (expected x, y or response)");
    }
    return map;
}

Dataset load_dataset(const fs::path& path, const ColumnMap& columns) {
    auto raw = read_raw(path);
    auto cx = find_column(raw.header, columns.x);
    auto cy = find_column(raw.header, columns.y);
    auto cr = find_column(raw.header, columns.response);
    if (raw.rows.empty()) throw EmptyFile(path.string());

    std::vector<std::size_t> cov_cols;
    for (std::size_t j = 0; j < raw.header.size(); ++j)
        if (j != cx && j != cy && j != cr) cov_cols.push_back(j);

    const auto n = static_cast<Eigen::Index>(raw.rows.size());
    Dataset data;
    data.x_name = columns.x;
    data.y_name = columns.y;
    data.response_name = columns.response;
    data.locations.resize(n, 2);
    data.response.resize(n);
    data.covariates.resize(n, static_cast<Eigen::Index>(cov_cols.size()));
    for (auto j : cov_cols) data.covariate_names.push_back(raw.header[j]);

    for (Eigen::Index i = 0; i < n; ++i) {
        auto row = static_cast<std::size_t>(i);
        if (raw.rows[row].size() > raw.header.size())
            throw ParseError(row + 1, raw.header.back(), "too many fields");
        data.locations(i, 0) = cell_value(raw, row, cx);
        data.locations(i, 1) = cell_value(raw, row, cy);
        data.response(i) = cell_value(raw, row, cr);
        for (std::size_t k = 0; k < cov_cols.size(); ++k)
            data.covariates(i, static_cast<Eigen::Index>(k)) = cell_value(raw, row, cov_cols[k]);
    }
    return data;
}

void write_dataset(const fs::path& path, const Dataset& data) {
    Table t;
    t.header = {data.x_name, data.y_name, data.response_name};
    t.header.insert(t.header.end(), data.covariate_names.begin(), data.covariate_names.end());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        RowBuilder r;
        r << data.locations(i, 0) << data.locations(i, 1);
        r << (data.response.size() == data.size() ? data.response(i) : std::nan(""));
        for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) r << data.covariates(i, j);
        t.rows.push_back(r.take());
    }
    write_table(path, t);
}

std::string format_number(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    return fmt::format("{:.17g}", value);
}

std::size_t Table::column(const std::string& name) const { return find_column(header, name); }

std::vector<double> Table::numeric_column(const std::string& name) const {
    auto c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (c >= r.size() || r[c].empty()) throw ParseError(i + 1, name, "missing value");
        double v = 0.0;
        if (r[c] == "nan") v = std::nan("");
        else if (r[c] == "inf") v = std::numeric_limits<double>::infinity();
        else if (r[c] == "-inf") v = -std::numeric_limits<double>::infinity();
        else if (!parse_double(r[c], v)) throw ParseError(i + 1, name, "not a number: '" + r[c] + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> Table::text_column(const std::string& name) const {
    auto c = column(name);
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (c >= rows[i].size()) throw ParseError(i + 1, name, "missing value");
        out.push_back(rows[i][c]);
    }
    return out;
}

RowBuilder& RowBuilder::operator<<(double v) {
    cells_.push_back(format_number(v));
    return *this;
}
RowBuilder& RowBuilder::operator<<(int v) {
    cells_.push_back(std::to_string(v));
    return *this;
}
RowBuilder& RowBuilder::operator<<(std::size_t v) {
    cells_.push_back(std::to_string(v));
    return *this;
}
RowBuilder& RowBuilder::operator<<(const std::string& v) {
    cells_.push_back(v);
    return *this;
}

void write_table(const fs::path& path, const Table& table) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t j = 0; j < cells.size(); ++j) {
            if (j) out << ',';
            out << cells[j];
        }
        out << '\n';
    };
    emit(table.header);
    for (const auto& r : table.rows) emit(r);
    if (!out) throw IoError("write failed: " + path.string());
}

Table read_table(const fs::path& path) {
    auto raw = read_raw(path);
    return Table{std::move(raw.header), std::move(raw.rows)};
}

Table cp_table(const CpExperimentResult& result) {
    Table t;
    t.header = {"sigma", "replicates"};
    for (int b = 1; b <= result.frequencies.cols(); ++b) t.header.push_back(fmt::format("model_{}", b));
    for (std::size_t s = 0; s < result.sigmas.size(); ++s) {
        RowBuilder r;
        r << result.sigmas[s] << result.replicates;
        for (Eigen::Index b = 0; b < result.frequencies.cols(); ++b)
            r << result.frequencies(static_cast<Eigen::Index>(s), b);
        t.rows.push_back(r.take());
    }
    return t;
}

Table bma_difference_table(const std::vector<double>& differences) {
    Table t;
    t.header = {"replicate", "difference"};
    for (std::size_t i = 0; i < differences.size(); ++i) t.rows.push_back((RowBuilder() << i << differences[i]).take());
    return t;
}

Table response_table(const std::vector<ResponseRow>& rows) {
    Table t;
    t.header = {"snr", "d", "replicate", "sigma2", "kappa", "sse_tc", "sse_m", "response", "stalls",
                "beta_acceptance"};
    for (const auto& x : rows)
        t.rows.push_back((RowBuilder() << x.snr << x.d << x.replicate << x.sigma2 << x.kappa << x.sse_tc << x.sse_m
                                       << x.response << x.stalls << x.beta_acceptance)
                             .take());
    return t;
}

Table cell_mean_table(const std::vector<ResponseRow>& rows) {
    std::vector<std::pair<double, double>> order;
    std::map<std::pair<double, double>, std::vector<double>> cells;
    for (const auto& x : rows) {
        auto key = std::make_pair(x.snr, x.d);
        if (!cells.contains(key)) order.push_back(key);
        cells[key].push_back(x.response);
    }
    Table t;
    t.header = {"snr", "d", "n", "mean_response", "se"};
    for (const auto& key : order) {
        const auto& v = cells[key];
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double e : v) ss += (e - m) * (e - m);
        const double se =
            v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
        t.rows.push_back((RowBuilder() << key.first << key.second << v.size() << m << se).take());
    }
    return t;
}

Table anova_table(const AnovaTable& anova) {
    Table t;
    t.header = {"Term", "DF", "SumSq", "MeanSq", "F", "p"};
    for (const auto* row : {&anova.factor_a, &anova.factor_b, &anova.interaction, &anova.residuals})
        t.rows.push_back((RowBuilder() << row->name << row->df << row->sum_sq << row->mean_sq << row->f << row->p).take());
    t.rows.push_back((RowBuilder() << "Total" << anova.total_df << anova.total_sum_sq << std::nan("") << std::nan("")
                                   << std::nan(""))
                         .take());
    return t;
}

Table theorem2_table(const Theorem2Report& report) {
    Table t;
    t.header = {"arm", "kappa", "n", "sigma2", "n_sigma2", "replicates", "mse_m", "mse_m_se",
                "admissible", "mean_sse_tc", "mean_sse_m", "difference", "difference_se", "stalls"};
    for (const auto* arm : {&report.theorem, &report.control})
        t.rows.push_back((RowBuilder() << arm->name << arm->kappa << static_cast<std::size_t>(report.n) << report.sigma2
                                       << report.n_sigma2 << report.replicates << report.mse_m << report.mse_m_se
                                       << arm->admissible << arm->mean_sse_tc << arm->mean_sse_m << arm->difference << arm->difference_se
                                       << arm->stalls)
                             .take());
    return t;
}

Table waic_table(const WaicSweep& sweep) {
    Table t;
    t.header = {"d", "kappa", "admissible", "waic", "waic_se", "stalls"};
    t.rows.push_back((RowBuilder() << "untruncated" << std::numeric_limits<double>::infinity() << 1
                                   << sweep.untruncated.value << sweep.untruncated.mc_se << std::size_t{0})
                         .take());
    for (const auto& p : sweep.points)
        t.rows.push_back((RowBuilder() << p.d << p.kappa << (p.admissible ? 1 : 0)
                                       << (p.admissible ? p.waic.value : std::nan(""))
                                       << (p.admissible ? p.waic.mc_se : std::nan("")) << p.stalls)
                             .take());
    return t;
}

Table chain_table(const Chain& chain, const GibbsWorkspace& ws, int burn_in) {
    Table t;
    t.header = {"iteration"};
    for (Eigen::Index j = 0; j < ws.p(); ++j) t.header.push_back(fmt::format("beta_{}", j));
    t.header.insert(t.header.end(), {"tau2", "b", "cpe"});
    for (std::size_t g = 0; g < chain.states.size(); ++g) {
        const auto& s = chain.states[g];
        RowBuilder r;
        r << static_cast<std::size_t>(burn_in) + g + 1;
        for (Eigen::Index j = 0; j < s.beta.size(); ++j) r << s.beta(j);
        r << s.tau2 << ws.decay(s.b_index) << s.cpe;
        t.rows.push_back(r.take());
    }
    return t;
}

ChainColumns read_chain(const fs::path& path) {
    auto t = read_table(path);
    ChainColumns c;
    std::vector<std::string> beta_names;
    for (const auto& h : t.header)
        if (h.starts_with("beta_")) beta_names.push_back(h);
    if (beta_names.empty()) throw MissingColumn("beta_0");
    const auto g = static_cast<Eigen::Index>(t.rows.size());
    for (double v : t.numeric_column("iteration")) c.iteration.push_back(static_cast<long>(v));
    c.beta.resize(g, static_cast<Eigen::Index>(beta_names.size()));
    for (std::size_t j = 0; j < beta_names.size(); ++j) {
        auto col = t.numeric_column(beta_names[j]);
        c.beta.col(static_cast<Eigen::Index>(j)) = Eigen::Map<Eigen::VectorXd>(col.data(), g);
    }
    auto load = [&](const char* name) {
        auto col = t.numeric_column(name);
        return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(col.data(), g));
    };
    c.tau2 = load("tau2");
    c.b = load("b");
    c.cpe = load("cpe");
    return c;
}

OutputDirectory::OutputDirectory(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw IoError("cannot create output directory " + dir_.string());
}

void OutputDirectory::write(const std::string& name, const Table& table) {
    if (finished_) throw IoError("output directory already finalized: " + dir_.string());
    if (!names_.insert(name).second) throw IoError("duplicate output file " + name);
    write_table(dir_ / name, table);
    files_.push_back(name);
}

void OutputDirectory::finish(nlohmann::json manifest) {
    if (finished_) throw IoError("output directory already finalized: " + dir_.string());
    manifest["version"] = std::string(kVersion);
    manifest["files"] = files_;
    std::ofstream out(dir_ / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest in " + dir_.string());
    out << manifest.dump(2) << '\n';
    finished_ = true;
}

}  // namespace cpetrunc
