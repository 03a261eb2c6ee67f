#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kbgrade/data.hpp"
#include "kbgrade/errors.hpp"

using namespace kbgrade;

namespace {

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

// One student per call: each term holds the given raw grades.
std::vector<TranscriptRow> history_rows(const std::string& student,
                                        const std::vector<std::vector<double>>& terms,
                                        int first_term = 1) {
  std::vector<TranscriptRow> rows;
  int course = 0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    for (double g : terms[t]) {
      rows.push_back({student, "K" + std::to_string(course++),
                      "T" + std::to_string(first_term + int(t) + 10), g});
    }
  }
  return rows;
}

}  // namespace

TEST_CASE("letter grades map to GPA points") {
  const auto data = parse(
      "student_id,course_id,term,grade\n"
      "s1,CS101,Fall02,A\n"
      "s1,CS102,Fall02,B+\n");
  REQUIRE(data.records().size() == 2);
  CHECK(data.records()[0].raw == 4.0);
  CHECK(data.records()[1].raw == doctest::Approx(3.333).epsilon(1e-12));
}

TEST_CASE("pass/fail rows are dropped and counted") {
  const auto data = parse(
      "student_id,course_id,term,grade\n"
      "s1,CS101,Fall02,S\n"
      "s1,CS102,Fall02,B\n"
      "s1,CS103,Fall02,P\n");
  CHECK(data.records().size() == 1);
  CHECK(data.dropped_pass_fail() == 2);
  CHECK(data.courses().size() == 1);
}

TEST_CASE("numeric grades are accepted") {
  const auto data = parse("student_id,course_id,term,grade\ns1,C1,T1,2.5\n");
  CHECK(data.records()[0].raw == 2.5);
}

TEST_CASE("malformed input reports the line") {
  CHECK_THROWS_AS(parse("student,course\n"), ParseError);
  CHECK_THROWS_AS(parse("student_id,course_id,term,grade\ns1,C1,T1\n"), ParseError);
  CHECK_THROWS_AS(parse("student_id,course_id,term,grade\ns1,C1,T1,Z\n"), ParseError);
  CHECK_THROWS_AS(parse("student_id,course_id,term,grade\ns1,C1,T1,4.5\n"), ParseError);
  CHECK_THROWS_AS(parse("student_id,course_id,term,grade\ns1,C1,T1,A\ns1,C1,T1,B\n"),
                  ParseError);
  try {
    parse("student_id,course_id,term,grade\ns1,C1,T1,A\ns2,C1,T1,QQ\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("row centering against earlier terms") {
  SUBCASE("mean of two prior grades") {
    const auto data = Dataset::from_rows(history_rows("s", {{4.0, 3.0}, {3.0}}));
    CHECK(data.records()[2].centered == doctest::Approx(-0.5));
    CHECK(data.records()[2].reference_gpa == doctest::Approx(3.5));
  }
  SUBCASE("exact zero becomes the small constant") {
    const auto data = Dataset::from_rows(history_rows("s", {{3.0, 3.0}, {3.0}}));
    CHECK(data.records()[2].centered == 0.01);
  }
  SUBCASE("single prior equal to current") {
    const auto data = Dataset::from_rows(history_rows("s", {{2.0}, {2.0}}));
    CHECK(data.records()[1].centered == 0.01);
  }
  SUBCASE("same-term grades are not prior") {
    const auto data = Dataset::from_rows(history_rows("s", {{4.0}, {2.0, 3.0}}));
    CHECK(data.records()[1].reference_gpa == 4.0);
    CHECK(data.records()[2].reference_gpa == 4.0);
    CHECK(data.records()[2].prior_courses == 1);
  }
  SUBCASE("first term is centered on its own mean") {
    const auto data = Dataset::from_rows(history_rows("s", {{4.0, 2.0}}));
    CHECK(data.records()[0].centered == doctest::Approx(1.0));
    CHECK(data.records()[1].centered == doctest::Approx(-1.0));
    CHECK(data.records()[0].prior_courses == 0);
  }
}

TEST_CASE("histories are sorted by term and numbered per student") {
  std::vector<TranscriptRow> rows{{"s", "B", "2001", 3.0}, {"s", "A", "2000", 2.0},
                                  {"s", "C", "2003", 4.0}};
  const auto data = Dataset::from_rows(rows);
  const auto h = data.history(0);
  REQUIRE(h.size() == 3);
  CHECK(data.courses().id(h[0].course) == "A");
  CHECK(h[0].term_index == 1);
  CHECK(h[1].term_index == 2);
  CHECK(h[2].term_index == 3);
}

TEST_CASE("csv round trip preserves records") {
  const auto data = parse(
      "student_id,course_id,term,grade\n"
      "s1,C1,T1,A-\n"
      "s1,C2,T2,2.75\n"
      "s2,C1,T1,F\n");
  std::ostringstream out;
  write_csv(data, out);
  const auto again = parse(out.str());
  REQUIRE(again.records().size() == data.records().size());
  for (std::size_t i = 0; i < data.records().size(); ++i) {
    CHECK(again.records()[i].raw == data.records()[i].raw);
    CHECK(again.records()[i].term == data.records()[i].term);
  }
}

TEST_CASE("missing file names the path") {
  try {
    ingest("/nonexistent/grades.csv");
    FAIL("expected failure");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/grades.csv") != std::string::npos);
  }
}

namespace {

// Student "a" has five prior courses before the test window; "b" only three.
Dataset split_fixture() {
  std::vector<TranscriptRow> rows;
  for (int i = 0; i < 5; ++i) rows.push_back({"a", "P" + std::to_string(i), "2001", 3.0});
  rows.push_back({"a", "P0", "2002", 3.0});  // validation window
  rows.push_back({"a", "P1", "2003", 2.0});  // test window, eligible
  rows.push_back({"a", "NEW", "2003", 2.0}); // test window, course unseen in train
  for (int i = 0; i < 3; ++i) rows.push_back({"b", "P" + std::to_string(i), "2001", 3.0});
  rows.push_back({"b", "P3", "2003", 3.0});  // only three prior courses
  return Dataset::from_rows(rows);
}

}  // namespace

TEST_CASE("chronological split and target eligibility") {
  const auto data = split_fixture();
  const auto split = split_chronological(data, "2001", "2002");
  CHECK(split.train.size() == 8);
  CHECK(split.validation.size() == 1);
  CHECK(split.test.size() == 3);
  REQUIRE(split.test_targets.size() == 1);
  const auto& target = data.records()[split.test_targets[0]];
  CHECK(data.students().id(target.student) == "a");
  CHECK(data.courses().id(target.course) == "P1");
  CHECK(split.validation_targets.size() == 1);
  // train targets need a prior course; first-term records have none
  CHECK(split.train_targets.empty());
  CHECK(split.warnings.empty());
}

TEST_CASE("degenerate boundaries") {
  const auto data = split_fixture();
  const auto split = split_chronological(data, "2002", "2003");
  CHECK(split.test.empty());
  REQUIRE_FALSE(split.warnings.empty());
  CHECK(split.warnings[0].find("test window is empty") != std::string::npos);
  CHECK_THROWS_AS(split_chronological(data, "2003", "2002"), DataError);
  CHECK_THROWS_AS(split_chronological(data, "1999", "2000"), DataError);
}

TEST_CASE("fraction boundaries leave every window non-empty") {
  std::vector<TranscriptRow> rows;
  for (int t = 0; t < 6; ++t) {
    for (int s = 0; s < 4; ++s) {
      rows.push_back({"s" + std::to_string(s), "C" + std::to_string(t), "T" + std::to_string(t), 3.0});
    }
  }
  const auto data = Dataset::from_rows(rows);
  for (double frac : {0.1, 0.5, 0.7, 0.95}) {
    const auto [t, v] = boundaries_by_fraction(data, frac, 0.04);
    const auto split = split_chronological(data, t, v);
    CHECK_FALSE(split.train.empty());
    CHECK_FALSE(split.validation.empty());
    CHECK_FALSE(split.test.empty());
  }
}
