#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "xgml/error.hpp"
#include "xgml/graph.hpp"
#include "xgml/rng.hpp"
#include "xgml/volume.hpp"

#include "support/testutil.hpp"

using namespace xgml;
using graph::DistanceGraph;
using graph::GroupGraph;
using ingest::GroupLabel;
using testutil::raises;
using testutil::TempDir;

namespace {

DistanceGraph random_graph(Rng& rng, std::size_t k) {
  auto g = DistanceGraph::zeros(k);
  for (auto& w : g.weights) w = rng.uniform(0.0, 3.0);
  return g;
}

/// Per-edge trimmed mean over subject graphs, written independently of the
/// library: sort each edge's values, drop floor(trim * n) per side, average.
std::vector<double> trimmed_means_by_sort(const std::vector<DistanceGraph>& graphs, double trim) {
  std::size_t n = graphs.size();
  std::size_t cut = static_cast<std::size_t>(std::floor(trim * static_cast<double>(n)));
  std::vector<double> out(graphs.front().weights.size());
  for (std::size_t e = 0; e < out.size(); ++e) {
    std::vector<double> values(n);
    for (std::size_t s = 0; s < n; ++s) values[s] = graphs[s].weights[e];
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (std::size_t s = cut; s < n - cut; ++s) sum += values[s];
    out[e] = sum / static_cast<double>(n - 2 * cut);
  }
  return out;
}

GroupGraph direct_group(std::vector<double> weights, std::size_t k) {
  GroupGraph g;
  g.group = GroupLabel::cn;
  g.n_subjects = 1;
  g.k = k;
  g.weights = std::move(weights);
  return g;
}

}  // namespace

TEST_CASE("edge indexing") {
  CHECK(graph::edge_count(200) == 19900);
  CHECK(graph::edge_count(3) == 3);
  CHECK(graph::edge_count(2) == 1);

  SUBCASE("row-major order for k = 3") {
    CHECK(graph::edge_index(0, 1, 3) == 0);
    CHECK(graph::edge_index(0, 2, 3) == 1);
    CHECK(graph::edge_index(1, 2, 3) == 2);
  }

  SUBCASE("endpoints invert the index for every pair") {
    const std::size_t k = 10;
    std::size_t expected = 0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        CHECK(graph::edge_index(i, j, k) == expected);
        auto [ei, ej] = graph::edge_endpoints(expected, k);
        CHECK(ei == i);
        CHECK(ej == j);
        ++expected;
      }
    CHECK(expected == graph::edge_count(k));
  }
}

TEST_CASE("distance graph accessors") {
  auto g = DistanceGraph::zeros(3);
  g.set(0, 1, 0.5);
  g.set(2, 0, 1.5);  // order-free endpoints
  CHECK(g.at(0, 1) == 0.5);
  CHECK(g.at(1, 0) == 0.5);
  CHECK(g.at(0, 2) == 1.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.at(i, i) == 0.0);
  g.validate();

  SUBCASE("negative weights fail validation") {
    g.weights[1] = -0.25;
    CHECK(raises(Errc::non_finite_value, [&] { g.validate(); }));
  }
}

TEST_CASE("flatten and unflatten") {
  SUBCASE("k = 3 flattens in row-major upper-triangle order") {
    auto g = DistanceGraph::zeros(3);
    g.set(0, 1, 10.0);
    g.set(0, 2, 20.0);
    g.set(1, 2, 30.0);
    CHECK(graph::flatten(g) == std::vector<double>{10.0, 20.0, 30.0});
  }

  SUBCASE("round trip is the identity for k in {3, 10, 200}") {
    Rng rng(404);
    for (std::size_t k : {3u, 10u, 200u}) {
      auto g = random_graph(rng, k);
      auto values = graph::flatten(g);
      CHECK(values.size() == graph::edge_count(k));
      auto back = graph::unflatten(values, k);
      CHECK(back.k == k);
      CHECK(back.weights == g.weights);
    }
  }

  SUBCASE("wrong payload length is rejected") {
    std::vector<double> values(5, 1.0);
    CHECK(raises(Errc::inconsistent_dimensions, [&] { graph::unflatten(values, 4); }));
  }
}

TEST_CASE("graph file io") {
  TempDir dir("xgml-graph");
  Rng rng(405);
  for (int trial = 0; trial < 50; ++trial) {
    auto g = random_graph(rng, 3 + rng.below(12));
    auto path = dir.file("g" + std::to_string(trial) + ".xgmlg");
    graph::write_graph(path, g);
    auto back = graph::read_graph(path);
    CHECK(back.k == g.k);
    CHECK(back.weights == g.weights);
  }

  SUBCASE("payload size is fixed by k") {
    auto g = random_graph(rng, 20);
    graph::write_graph(dir.file("sized.xgmlg"), g);
    CHECK(std::filesystem::file_size(dir.file("sized.xgmlg")) == 6 + 4 + 190 * 8);
  }

  SUBCASE("foreign bytes are rejected") {
    std::ofstream out(dir.file("junk.xgmlg"), std::ios::binary);
    out << "not a graph";
    out.close();
    CHECK(raises(Errc::not_a_volume, [&] { graph::read_graph(dir.file("junk.xgmlg")); }));
  }
}

TEST_CASE("group graph aggregation") {
  SUBCASE("trimmed mean drops one value per tail at trim 0.1 over ten subjects") {
    // Edge (0,1) carries 1..10; the flanking edges pin the normalization
    // range to [0, 10] so the trimmed mean is read off the normalized value.
    std::vector<DistanceGraph> graphs;
    for (int s = 1; s <= 10; ++s) {
      auto g = DistanceGraph::zeros(3);
      g.set(0, 1, static_cast<double>(s));
      g.set(0, 2, 0.0);
      g.set(1, 2, 10.0);
      graphs.push_back(std::move(g));
    }
    auto grouped = graph::group_graph(graphs, GroupLabel::cn, 0.1);
    CHECK(grouped.n_subjects == 10);
    CHECK(grouped.trim_fraction == 0.1);
    CHECK_FALSE(grouped.degenerate);
    // mean of {2..9} = 5.5, normalized against min 0 and max 10.
    CHECK(grouped.weights[0] == doctest::Approx(0.55).epsilon(1e-12));
    CHECK(grouped.weights[1] == 0.0);
    CHECK(grouped.weights[2] == 1.0);
  }

  SUBCASE("identical subjects normalize to a degenerate all-zero graph") {
    std::vector<DistanceGraph> graphs;
    for (int s = 0; s < 4; ++s) {
      auto g = DistanceGraph::zeros(3);
      g.set(0, 1, 2.0);
      g.set(0, 2, 2.0);
      g.set(1, 2, 2.0);
      graphs.push_back(std::move(g));
    }
    auto grouped = graph::group_graph(graphs, GroupLabel::ad, 0.1);
    CHECK(grouped.degenerate);
    for (double w : grouped.weights) CHECK(w == 0.0);
  }

  SUBCASE("trim 0 equals the plain mean before normalization") {
    Rng rng(406);
    std::vector<DistanceGraph> graphs;
    for (int s = 0; s < 7; ++s) graphs.push_back(random_graph(rng, 5));
    auto grouped = graph::group_graph(graphs, GroupLabel::mci, 0.0);
    auto plain = trimmed_means_by_sort(graphs, 0.0);
    double lo = *std::min_element(plain.begin(), plain.end());
    double hi = *std::max_element(plain.begin(), plain.end());
    REQUIRE(grouped.weights.size() == plain.size());
    for (std::size_t e = 0; e < plain.size(); ++e)
      CHECK(grouped.weights[e] == doctest::Approx((plain[e] - lo) / (hi - lo)).epsilon(1e-12));
  }

  SUBCASE("twenty subjects match the sort-based reference") {
    Rng rng(407);
    std::vector<DistanceGraph> graphs;
    for (int s = 0; s < 20; ++s) graphs.push_back(random_graph(rng, 8));
    auto grouped = graph::group_graph(graphs, GroupLabel::cn, 0.1);
    auto reference = trimmed_means_by_sort(graphs, 0.1);
    double lo = *std::min_element(reference.begin(), reference.end());
    double hi = *std::max_element(reference.begin(), reference.end());
    for (std::size_t e = 0; e < reference.size(); ++e)
      CHECK(grouped.weights[e] ==
            doctest::Approx((reference[e] - lo) / (hi - lo)).epsilon(1e-12));
  }

  SUBCASE("normalizing an already normalized graph changes nothing") {
    Rng rng(408);
    std::vector<DistanceGraph> graphs;
    for (int s = 0; s < 9; ++s) graphs.push_back(random_graph(rng, 6));
    auto once = graph::group_graph(graphs, GroupLabel::cn, 0.0);
    std::vector<DistanceGraph> renorm{graph::unflatten(once.weights, once.k)};
    auto twice = graph::group_graph(renorm, GroupLabel::cn, 0.0);
    REQUIRE(twice.weights.size() == once.weights.size());
    for (std::size_t e = 0; e < once.weights.size(); ++e)
      CHECK(twice.weights[e] == doctest::Approx(once.weights[e]).epsilon(1e-12));
  }

  SUBCASE("empty input and mismatched sizes are rejected") {
    std::vector<DistanceGraph> none;
    CHECK(raises(Errc::empty_group, [&] { graph::group_graph(none, GroupLabel::cn, 0.1); }));
    std::vector<DistanceGraph> mixed{DistanceGraph::zeros(3), DistanceGraph::zeros(4)};
    CHECK(raises(Errc::inconsistent_dimensions,
                 [&] { graph::group_graph(mixed, GroupLabel::cn, 0.1); }));
    std::vector<DistanceGraph> one{DistanceGraph::zeros(3)};
    CHECK(raises(Errc::bad_config, [&] { graph::group_graph(one, GroupLabel::cn, 0.5); }));
  }
}

TEST_CASE("group graph statistics") {
  SUBCASE("mean distance averages the upper triangle") {
    CHECK(graph::mean_distance(direct_group({0.5, 0.5, 0.5}, 3)) == doctest::Approx(0.5));
    CHECK(graph::mean_distance(direct_group({0.2, 0.4, 0.6}, 3)) == doctest::Approx(0.4));
  }

  SUBCASE("threshold counting is strict") {
    auto g = direct_group({0.69, 0.70, 0.71}, 3);
    CHECK(graph::count_edges_above(g, 0.70) == 1);
    CHECK(graph::count_edges_above(g, 0.75) == 0);
    CHECK(graph::count_edges_above(g, 0.68) == 3);
  }

  SUBCASE("the maximum edge survives any threshold below one") {
    Rng rng(409);
    std::vector<DistanceGraph> graphs;
    for (int s = 0; s < 5; ++s) graphs.push_back(random_graph(rng, 6));
    auto grouped = graph::group_graph(graphs, GroupLabel::cn, 0.0);
    CHECK(graph::count_edges_above(grouped, 1.0 - 1e-9) >= 1);
  }

  SUBCASE("counts never grow as the threshold rises") {
    Rng rng(410);
    auto g = direct_group(std::vector<double>(45, 0.0), 10);
    for (auto& w : g.weights) w = rng.uniform();
    std::size_t previous = graph::count_edges_above(g, 0.05);
    for (double t = 0.1; t < 1.0; t += 0.05) {
      std::size_t current = graph::count_edges_above(g, t);
      CHECK(current <= previous);
      previous = current;
    }
  }

  SUBCASE("thresholds outside (0, 1) are rejected") {
    auto g = direct_group({0.5, 0.5, 0.5}, 3);
    CHECK(raises(Errc::bad_config, [&] { graph::count_edges_above(g, 0.0); }));
    CHECK(raises(Errc::bad_config, [&] { graph::count_edges_above(g, 1.0); }));
  }
}

TEST_CASE("exponential similarity") {
  auto g = DistanceGraph::zeros(3);
  g.set(0, 1, 0.0);
  g.set(0, 2, std::log(2.0));
  g.set(1, 2, 2.0);
  auto sim = graph::exp_similarity(g);
  CHECK(sim(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sim(0, 2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sim(1, 0) == sim(0, 1));
  for (std::size_t i = 0; i < 3; ++i) CHECK(sim(i, i) == 1.0);

  SUBCASE("similarity falls as distance grows") {
    Rng rng(411);
    for (int trial = 0; trial < 20; ++trial) {
      double w1 = rng.uniform(0.0, 4.0);
      double w2 = w1 + rng.uniform(0.01, 2.0);
      auto h = DistanceGraph::zeros(2);
      h.set(0, 1, w1);
      double s1 = graph::exp_similarity(h)(0, 1);
      h.set(0, 1, w2);
      double s2 = graph::exp_similarity(h)(0, 1);
      CHECK(s1 > s2);
    }
  }
}

TEST_CASE("group report files") {
  TempDir dir("xgml-group");
  auto g = direct_group({0.2, 0.8, 0.5}, 3);
  g.n_subjects = 4;
  g.trim_fraction = 0.1;
  graph::write_group_report(dir.file("group_cn.json"), g);
  graph::write_group_edges_csv(dir.file("group_cn_edges.csv"), g, 0.4);

  std::ifstream json_in(dir.file("group_cn.json"));
  std::string json_text((std::istreambuf_iterator<char>(json_in)),
                        std::istreambuf_iterator<char>());
  CHECK(json_text.find("\"mean_distance\"") != std::string::npos);
  CHECK(json_text.find("\"0.70\"") != std::string::npos);
  CHECK(json_text.find("\"0.75\"") != std::string::npos);
  CHECK(json_text.find("\"0.80\"") != std::string::npos);

  std::ifstream csv_in(dir.file("group_cn_edges.csv"));
  std::string csv_text((std::istreambuf_iterator<char>(csv_in)), std::istreambuf_iterator<char>());
  // Edges 0.8 and 0.5 clear the display threshold; 0.2 does not.
  CHECK(csv_text.find("0.8") != std::string::npos);
  CHECK(csv_text.find("0.2") == std::string::npos);
}
