#pragma once

#include <cstddef>
#include <cstdint>

#include "relclust/affinity.hpp"

namespace relclust {

/// Lloyd's k-means with farthest-point seeding from a seeded first center.
/// Each cluster is represented by its member closest to the centroid.
ClusterAssignment kmeans_baseline(const FeatureMatrix& features, std::size_t k,
                                  std::uint64_t seed, std::size_t max_iter = 100);

}  // namespace relclust
