#include <sstream>

#include <gtest/gtest.h>

#include "reference.hpp"
#include "ringroute/io.hpp"

using namespace ringroute;

TEST(Json, BigIntegers) {
  EXPECT_EQ(big_to_json(BigInt(-5)), Json(-5));
  const BigInt big = parse_bigint("686459780883843256000");
  EXPECT_EQ(big_to_json(big), Json("686459780883843256000"));
  EXPECT_EQ(rational_to_json(Rational(1, 9)), Json("1/9"));
  EXPECT_EQ(rational_to_json(Rational(4, 2)), Json(2));
}

TEST(Json, SeriesAreDecimalStrings) {
  const IntSeries s(ref::big(ref::kN4AllEmpty));
  const Json j = series_to_json(s);
  ASSERT_EQ(j.size(), 19u);
  for (const auto& c : j) EXPECT_TRUE(c.is_string());
  EXPECT_EQ(j[1], "-24");
  EXPECT_EQ(series_from_json(j), s);
  EXPECT_EQ(series_from_json(Json::parse(R"([0, "1", -2])")), IntSeries(std::vector<BigInt>{0, 1, -2}));
  EXPECT_THROW(series_from_json(Json::parse(R"([1.5])")), DomainError);
  EXPECT_THROW(series_from_json(Json::array()), DomainError);
}

TEST(Json, StateDistRoundTrip) {
  for (bool compressed : {false, true}) {
    TaylorOptions opt;
    opt.compressed = compressed;
    const StateDist d = stationary_series(RingSpec::standard(3, 0.0), 3, opt);
    const StateDist back = dist_from_json(Json::parse(dist_to_json(d).dump()));
    EXPECT_EQ(back.states, d.states);
    EXPECT_EQ(back.k, 3);
    EXPECT_EQ(back.compressed, compressed);
    EXPECT_EQ(expected_queue_series(back), expected_queue_series(d));
    EXPECT_EQ(back.probability(ground_state(3)), d.probability(ground_state(3)));
  }
  EXPECT_THROW(dist_from_json(Json{{"format", "other"}}), DomainError);
}

TEST(Json, Envelope) {
  const Json e = envelope({{"command", "formulas"}}, 9, {{"value", "1/9"}}, {{"a", true, ""}, {"b", false, "x"}});
  std::vector<std::string> keys;
  for (auto it = e.begin(); it != e.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"config", "seed", "results", "checks"}));
  EXPECT_EQ(e["seed"], 9);
  EXPECT_EQ(e["checks"][1]["pass"], false);
  EXPECT_EQ(e["checks"][1]["detail"], "x");
  // identical inputs give byte-identical output
  EXPECT_EQ(e.dump(), envelope({{"command", "formulas"}}, 9, {{"value", "1/9"}}, {{"a", true, ""}, {"b", false, "x"}}).dump());
}

TEST(Json, ButterflyRoundTrip) {
  std::mt19937_64 gen(7);
  const ButterflyPair p = ButterflyPair::random(4, gen);
  const ButterflyPair q = pair_from_json(Json::parse(pair_to_json(p).dump()));
  EXPECT_EQ(q.pi_left, p.pi_left);
  EXPECT_EQ(q.pi_right, p.pi_right);
  EXPECT_THROW(pair_from_json(Json{{"d", 2}, {"pi_left", {0, 0}}, {"pi_right", {0, 1}}}), DomainError);

  const std::vector<Label> A = {1, 6, 9}, B = {0, 2, 15};
  const PathSet ps = route_subset(p, A, B);
  const PathSet back = paths_from_json(Json::parse(paths_to_json(ps).dump()), 4);
  EXPECT_EQ(back.paths, ps.paths);
  const Json v = verify_to_json(verify_node_disjoint(p, back, A, B));
  EXPECT_EQ(v["ok"], true);
  EXPECT_TRUE(v["violations"].empty());
}

TEST(Csv, Escaping) {
  EXPECT_EQ(csv_field(Json("plain")), "plain");
  EXPECT_EQ(csv_field(Json(3)), "3");
  EXPECT_EQ(csv_field(Json(true)), "true");
  EXPECT_EQ(csv_field(Json("a,b")), "\"a,b\"");
  EXPECT_EQ(csv_field(Json("say \"hi\"")), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field(Json("two\nlines")), "\"two\nlines\"");
  std::ostringstream os;
  write_csv(os, {"degree", "value"}, Json::parse(R"([[0, "1"], [1, "-24"], [2, "x,y"]])"));
  EXPECT_EQ(os.str(), "degree,value\n0,1\n1,-24\n2,\"x,y\"\n");
}
