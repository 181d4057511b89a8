#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpetrunc/stat_core.hpp"

namespace cpetrunc {

/// Spatial dataset: 2-d locations, a response L and covariate columns.
struct Dataset {
    Eigen::MatrixXd locations;  ///< n x 2
    Eigen::VectorXd response;
    Eigen::MatrixXd covariates;  ///< n x q
    std::vector<std::string> covariate_names;
    std::string x_name = "x";
    std::string y_name = "y";
    std::string response_name = "response";

    Eigen::Index size() const noexcept { return locations.rows(); }

    /// Intercept column followed by the covariates.
    Eigen::MatrixXd design() const {
        Eigen::MatrixXd x(size(), covariates.cols() + 1);
        x.col(0).setOnes();
        x.rightCols(covariates.cols()) = covariates;
        return x;
    }

    SpatialLocations<double> spatial_locations() const { return SpatialLocations<double>(locations); }
};

}  // namespace cpetrunc
