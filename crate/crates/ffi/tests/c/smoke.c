#include <stdio.h>
#include <string.h>
#include "lightfdg.h"

#define CHECK(expr)                                                    \
  do {                                                                 \
    LfdgStatus s_ = (expr);                                            \
    if (s_ != LFDG_STATUS_OK) {                                        \
      char msg[512];                                                   \
      lfdg_last_error(msg, sizeof msg, NULL);                          \
      fprintf(stderr, "%s:%d: status %d: %s\n", __FILE__, __LINE__,   \
              (int)s_, msg);                                           \
      return 1;                                                        \
    }                                                                  \
  } while (0)

int main(void) {
  size_t w = 0;
  CHECK(lfdg_min_wavelengths(8, 0.5, &w));
  if (w != 4) return 2;

  LfdgScenario *sc = NULL;
  CHECK(lfdg_scenario_from_json("{\"kind\":\"shuffle\",\"shuffle\":{\"k\":4,\"ef_fraction\":0.25}}", &sc));
  LfdgReport *rep = NULL;
  CHECK(lfdg_simulate(sc, LFDG_POLICY_LIGHTFDG, 1, &rep));
  LfdgClassSummary mf, ef;
  CHECK(lfdg_report_class_summary(rep, LFDG_CLASS_MICE, &mf));
  CHECK(lfdg_report_class_summary(rep, LFDG_CLASS_ELEPHANT, &ef));
  printf("mf %llu flows sat %.3f, ef %llu flows %.3e b/s\n", (unsigned long long)mf.flows,
         mf.deadline_satisfaction, (unsigned long long)ef.flows, ef.throughput_bps);
  lfdg_report_free(rep);
  lfdg_scenario_free(sc);

  LfdgScenario *bad = NULL;
  if (lfdg_scenario_from_json("{\"wavelengths\":3}", &bad) == LFDG_STATUS_OK) {
    LfdgProvisioning *p = NULL;
    if (lfdg_provision(bad, 0, &p) != LFDG_STATUS_INFEASIBLE) return 3;
    lfdg_scenario_free(bad);
  }
  printf("ok %s\n", lfdg_version());
  return 0;
}
