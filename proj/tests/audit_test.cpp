#include <gtest/gtest.h>

#include <sstream>

#include "emapg/audit.hpp"

namespace emapg {
namespace {

void expect_all_pass(const AuditReport& r) {
  EXPECT_TRUE(r.passed());
  for (const auto& row : r.rows()) {
    EXPECT_TRUE(row.pass()) << row.section << "/" << row.item << ": " << row.check << " error " << row.error;
  }
}

TEST(AuditReport, RowSemantics) {
  AuditRow bound{"s", "i", "c", 0.5, 1.0};
  EXPECT_TRUE(bound.pass());
  bound.error = 2.0;
  EXPECT_FALSE(bound.pass());
  AuditRow witness{"s", "i", "c", 2.0, 1.0, false};
  EXPECT_TRUE(witness.pass());
  witness.error = 0.5;
  EXPECT_FALSE(witness.pass());
}

TEST(AuditReport, CsvAndSections) {
  AuditReport r;
  r.add({"a", "x", "ok", 0.0, 1.0});
  r.add({"b", "y", "bad", 3.0, 1.0});
  EXPECT_FALSE(r.passed());
  EXPECT_TRUE(r.passed("a"));
  EXPECT_FALSE(r.passed("b"));
  EXPECT_EQ(r.count("a"), 1u);
  std::ostringstream os;
  r.write_csv(os);
  const std::string csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "section,item,check,error,tolerance,pass");
  EXPECT_NE(csv.find(",FAIL\n"), std::string::npos);
}

TEST(Audit, EstimatorsSmall) {
  EstimatorAuditConfig cfg;
  cfg.pairs = 8;
  cfg.random_sets = 3;
  const AuditReport r = audit_estimators(cfg);
  expect_all_pass(r);
  for (const char* s : {"sampled", "topk", "topk_baseline", "offpolicy", "sequence"}) EXPECT_GT(r.count(s), 0u) << s;
}

TEST(Audit, FdivSmall) {
  FdivAuditConfig cfg;
  cfg.pairs = 8;
  cfg.random_sets = 3;
  cfg.instances = 4;
  const AuditReport r = audit_fdiv(cfg);
  expect_all_pass(r);
  for (const char* s : {"fdiv", "pg_weight", "optimal_policy", "transform", "pg_loss"}) EXPECT_GT(r.count(s), 0u) << s;
}

TEST(Audit, DynamicsSmall) {
  DynamicsAuditConfig cfg;
  cfg.closed_form_instances = 5;
  cfg.max_dim = 8;
  cfg.max_steps = 100;
  cfg.steady_instances = 50;
  const DynamicsAudit d = audit_dynamics(cfg);
  expect_all_pass(d.report);
  EXPECT_EQ(d.probes.size(), 25u);
}

TEST(Audit, Deterministic) {
  EstimatorAuditConfig cfg;
  cfg.pairs = 3;
  cfg.random_sets = 2;
  std::ostringstream a, b;
  audit_estimators(cfg).write_csv(a);
  audit_estimators(cfg).write_csv(b);
  EXPECT_EQ(a.str(), b.str());
}

}  // namespace
}  // namespace emapg
