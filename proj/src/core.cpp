#include "canon9d/core.hpp"

#include <cstring>
#include <string>

namespace canon9d {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidFeature: return "InvalidFeature";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::UnknownStatus: return "UnknownStatus";
    case Errc::MissingFile: return "MissingFile";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownObject: return "UnknownObject";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::DegenerateMean: return "DegenerateMean";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::EmptyCluster: return "EmptyCluster";
    case Errc::NoFeatures: return "NoFeatures";
    case Errc::DegenerateWeights: return "DegenerateWeights";
    case Errc::TooFewCorrespondences: return "TooFewCorrespondences";
    case Errc::DegenerateSample: return "DegenerateSample";
    case Errc::NonFiniteObjective: return "NonFiniteObjective";
    case Errc::DegenerateExtent: return "DegenerateExtent";
    case Errc::UnknownRule: return "UnknownRule";
    case Errc::MissingPrediction: return "MissingPrediction";
    case Errc::NoVerifiedReference: return "NoVerifiedReference";
    case Errc::EmptyPending: return "EmptyPending";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

void check_valid(const Sim3& t, const char* what) {
  if (!is_valid(t)) throw Error(Errc::InvalidArgument, std::string("invalid ") + what);
}

void check_valid(const Box9D& p, const char* what) {
  if (!is_valid(p)) throw Error(Errc::InvalidArgument, std::string("invalid ") + what);
}

void FeaturedSurface::add_vertex(const Eigen::Vector3f& v, const Eigen::MatrixXf& obs) {
  if (obs.cols() > 0 && obs.rows() != feature_dim) {
    throw Error(Errc::DimensionMismatch, "feature observation has dimension " +
                                             std::to_string(obs.rows()) + ", expected " +
                                             std::to_string(feature_dim));
  }
  const Eigen::Index n = vertices.cols();
  vertices.conservativeResize(3, n + 1);
  vertices.col(n) = v;
  const Eigen::Index total = features.cols();
  features.conservativeResize(feature_dim, total + obs.cols());
  if (obs.cols() > 0) features.rightCols(obs.cols()) = obs;
  offsets.push_back(static_cast<std::uint32_t>(total + obs.cols()));
}

void check_valid(const FeaturedSurface& s) {
  if (s.feature_dim <= 0) throw Error(Errc::DimensionMismatch, "feature dimension must be positive");
  if (s.offsets.size() != static_cast<std::size_t>(s.vertex_count()) + 1 || s.offsets.front() != 0 ||
      s.offsets.back() != static_cast<std::uint32_t>(s.features.cols())) {
    throw Error(Errc::DimensionMismatch, "feature offsets inconsistent with feature block");
  }
  if (s.features.cols() > 0 && s.features.rows() != s.feature_dim) {
    throw Error(Errc::DimensionMismatch, "feature block rows differ from feature dimension");
  }
  for (Eigen::Index c = 0; c < s.features.cols(); ++c) {
    const float n = s.features.col(c).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0f) > 1e-4f) {
      throw Error(Errc::InvalidFeature, "feature " + std::to_string(c) + " is not unit norm");
    }
  }
}

bool bitwise_equal(const FeaturedSurface& a, const FeaturedSurface& b) {
  if (a.feature_dim != b.feature_dim || a.offsets != b.offsets ||
      a.vertices.cols() != b.vertices.cols() || a.features.size() != b.features.size()) {
    return false;
  }
  return std::memcmp(a.vertices.data(), b.vertices.data(), sizeof(float) * a.vertices.size()) == 0 &&
         std::memcmp(a.features.data(), b.features.data(), sizeof(float) * a.features.size()) == 0;
}

}  // namespace canon9d
