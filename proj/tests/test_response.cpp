#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "laspet/response.hpp"

using namespace laspet;

TEST_CASE("qpet maps into deauville bins with upward boundaries") {
  CHECK(qpet_to_ds(0.2) == 1);
  CHECK(qpet_to_ds(0.94) == 1);
  CHECK(qpet_to_ds(0.95) == 2);  // boundary goes up
  CHECK(qpet_to_ds(1.1) == 2);
  CHECK(qpet_to_ds(1.3) == 3);
  CHECK(qpet_to_ds(1.99) == 3);
  CHECK(qpet_to_ds(2.0) == 4);
  CHECK(qpet_to_ds(2.5) == 4);
  CHECK(qpet_to_ds(3.0) == 5);
  CHECK(qpet_to_ds(17.0) == 5);
}

TEST_CASE("absent qpet is complete response") {
  CHECK(qpet_to_ds(std::nullopt) == 1);
}

TEST_CASE("custom thresholds shift the bins") {
  QpetThresholds th{0.5, 2.0 / 3.0, 1.0, 1.3};
  CHECK(qpet_to_ds(0.4, th) == 1);
  CHECK(qpet_to_ds(0.6, th) == 2);
  CHECK(qpet_to_ds(0.8, th) == 3);
  CHECK(qpet_to_ds(1.1, th) == 4);
  CHECK(qpet_to_ds(1.3, th) == 5);
}

TEST_CASE("threshold validation requires positive ascending values") {
  QpetThresholds bad;
  bad.t34 = bad.t45;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = QpetThresholds{};
  bad.t12 = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = QpetThresholds{};
  bad.t23 = 0.5;  // below t12
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(qpet_to_ds(1.0, bad), std::invalid_argument);
}

TEST_CASE("patient score is the worst lesion score") {
  LesionSet set;
  set.dims = {4, 4, 4};
  set.spacing = {1, 1, 1};

  SUBCASE("no lesions") { CHECK(patient_ds(set) == 1); }

  SUBCASE("scored lesions") {
    Lesion a;
    a.id = 1;
    a.lds = 3;
    Lesion b;
    b.id = 2;
    b.lds = 5;
    Lesion c;
    c.id = 3;  // unscored lesion is ignored
    set.lesions = {a, b, c};
    CHECK(patient_ds(set) == 5);
    set.lesions = {a, c};
    CHECK(patient_ds(set) == 3);
    set.lesions = {c};
    CHECK(patient_ds(set) == 1);
  }
}

TEST_CASE("response labels cut at 3 and 4") {
  auto r1 = make_response_label(1);
  CHECK(r1.patient_ds == 1);
  CHECK_FALSE(r1.binary_3plus);
  CHECK_FALSE(r1.binary_4plus);

  auto r3 = make_response_label(3);
  CHECK(r3.binary_3plus);
  CHECK_FALSE(r3.binary_4plus);

  auto r4 = make_response_label(4);
  CHECK(r4.binary_3plus);
  CHECK(r4.binary_4plus);

  auto r5 = make_response_label(5);
  CHECK(r5.binary_3plus);
  CHECK(r5.binary_4plus);

  CHECK_THROWS_AS(make_response_label(0), std::invalid_argument);
  CHECK_THROWS_AS(make_response_label(6), std::invalid_argument);
}
