#pragma once

// Dataset ingestion, delimited result tables, chain files and the per-directory run manifest.

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cpetrunc/dataset.hpp"
#include "cpetrunc/experiments.hpp"
#include "cpetrunc/sampler.hpp"

namespace cpetrunc {

inline constexpr std::string_view kVersion = "0.1.0";

/// Names of the location and response columns; every other column is a covariate.
struct ColumnMap {
    std::string x = "x";
    std::string y = "y";
    std::string response = "response";

    /// Parses "x=Easting,y=Northing,response=logthick"; unspecified keys keep their defaults.
    static ColumnMap parse(const std::string& text);
};

/// Comma- or tab-delimited file with a header row (delimiter detected from the header).
Dataset load_dataset(const std::filesystem::path& path, const ColumnMap& columns = {});
void write_dataset(const std::filesystem::path& path, const Dataset& data);

/// 17 significant digits, so that reruns compare byte for byte.
std::string format_number(double value);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Position of a header column; throws MissingColumn.
    std::size_t column(const std::string& name) const;
    std::vector<double> numeric_column(const std::string& name) const;
    std::vector<std::string> text_column(const std::string& name) const;
};

/// Builds one table row from mixed values.
class RowBuilder {
public:
    RowBuilder& operator<<(double v);
    RowBuilder& operator<<(int v);
    RowBuilder& operator<<(std::size_t v);
    RowBuilder& operator<<(const std::string& v);
    RowBuilder& operator<<(const char* v) { return *this << std::string(v); }
    std::vector<std::string> take() { return std::move(cells_); }

private:
    std::vector<std::string> cells_;
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path);

// Result tables.
Table cp_table(const CpExperimentResult& result);
Table bma_difference_table(const std::vector<double>& differences);
Table response_table(const std::vector<ResponseRow>& rows);
Table cell_mean_table(const std::vector<ResponseRow>& rows);
Table anova_table(const AnovaTable& anova);
Table theorem2_table(const Theorem2Report& report);
Table waic_table(const WaicSweep& sweep);

/// One row per stored iteration: iteration, beta_0..beta_{p-1}, tau2, b, cpe.
Table chain_table(const Chain& chain, const GibbsWorkspace& ws, int burn_in);

struct ChainColumns {
    std::vector<long> iteration;
    Eigen::MatrixXd beta;  ///< one row per stored iteration
    Eigen::VectorXd tau2;
    Eigen::VectorXd b;
    Eigen::VectorXd cpe;
};

ChainColumns read_chain(const std::filesystem::path& path);

/**
 * Single writer for one output directory. Tables are written as they arrive; the manifest
 * (config echo, seeds, file list, version, wall-clock) is written once by finish().
 */
class OutputDirectory {
public:
    explicit OutputDirectory(std::filesystem::path dir);

    const std::filesystem::path& path() const noexcept { return dir_; }
    void write(const std::string& name, const Table& table);
    void finish(nlohmann::json manifest);

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
    std::set<std::string> names_;
    bool finished_ = false;
};

}  // namespace cpetrunc
