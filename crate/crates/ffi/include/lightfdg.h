#ifndef LIGHTFDG_H
#define LIGHTFDG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfdgStatus {
  LFDG_STATUS_OK = 0,
  LFDG_STATUS_NULL_POINTER = 1,
  LFDG_STATUS_INVALID_ARGUMENT = 2,
  LFDG_STATUS_PARSE = 3,
  /**
   * No lightpath assignment satisfies the demand.
   */
  LFDG_STATUS_INFEASIBLE = 4,
  LFDG_STATUS_BUFFER_TOO_SMALL = 5,
  LFDG_STATUS_PANIC = 6,
} LfdgStatus;

typedef enum LfdgClass {
  LFDG_CLASS_MICE = 0,
  LFDG_CLASS_ELEPHANT = 1,
} LfdgClass;

typedef enum LfdgPolicy {
  LFDG_POLICY_ECMP = 0,
  LFDG_POLICY_ECMP_FSO = 1,
  LFDG_POLICY_FG_FSO = 2,
  LFDG_POLICY_LIGHTFDG = 3,
} LfdgPolicy;

typedef enum LfdgMode {
  LFDG_MODE_IN_NETWORK = 0,
  LFDG_MODE_CENTRALIZED = 1,
} LfdgMode;

typedef enum LfdgPacketKind {
  LFDG_PACKET_KIND_SYN = 0,
  LFDG_PACKET_KIND_SYN_ACK = 1,
  LFDG_PACKET_KIND_ACK = 2,
  LFDG_PACKET_KIND_FIN = 3,
  LFDG_PACKET_KIND_RST = 4,
  LFDG_PACKET_KIND_DATA = 5,
} LfdgPacketKind;

/**
 * Streaming ACK-based detector.
 */
typedef struct LfdgDetector LfdgDetector;

/**
 * Provisioned lightpath table.
 */
typedef struct LfdgProvisioning LfdgProvisioning;

/**
 * Metrics of one simulation run.
 */
typedef struct LfdgReport LfdgReport;

/**
 * Scenario parsed from JSON.
 */
typedef struct LfdgScenario LfdgScenario;

typedef struct LfdgClassSummary {
  uint64_t flows;
  uint64_t bytes;
  uint64_t makespan_ns;
  double throughput_bps;
  double mean_fct_ns;
  uint64_t max_fct_ns;
  uint64_t deadline_met;
  double deadline_satisfaction;
} LfdgClassSummary;

typedef struct LfdgDetectorOptions {
  enum LfdgMode mode;
  uint64_t threshold_bytes;
  uint64_t notification_delay_ns;
  /**
   * Forward one ACK in this many (centralized mode).
   */
  uint32_t ack_sample_rate;
  bool stop_useless;
  bool preclassify;
} LfdgDetectorOptions;

/**
 * One TCP packet as seen at an edge switch. Addresses are IPv4 in host
 * byte order (10.0.1.2 is 0x0A000102).
 */
typedef struct LfdgPacket {
  uint64_t ts_ns;
  uint32_t src;
  uint32_t dst;
  uint16_t sport;
  uint16_t dport;
  enum LfdgPacketKind kind;
  uint32_t seq;
  uint32_t ack;
  uint32_t len;
} LfdgPacket;

typedef struct LfdgClassification {
  /**
   * False when this packet produced no decision; other fields are then zero.
   */
  bool classified;
  enum LfdgClass class_;
  uint64_t at_ns;
  bool preclassified;
} LfdgClassification;

typedef struct LfdgDetectorStats {
  uint64_t packets_total;
  uint64_t packets_captured;
  uint64_t notifications;
  uint64_t elephants_detected;
  uint64_t preclassified;
  uint64_t suppressed;
} LfdgDetectorStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lfdg_version(void);

/**
 * Copy the calling thread's last error message (empty after success).
 * `needed` (nullable) receives the size including the NUL.
 */
enum LfdgStatus lfdg_last_error(char *buf, size_t len, size_t *needed);

/**
 * Smallest wavelength count that fits one MF and one EF lightpath per rack pair.
 */
enum LfdgStatus lfdg_min_wavelengths(size_t leaf_count, double spine_ratio, size_t *out);

/**
 * Achievable bit rate of one wavelength with composite channel gain `gain`.
 */
enum LfdgStatus lfdg_wavelength_capacity(double gain,
                                         double intensity,
                                         double bandwidth_hz,
                                         double *out);

/**
 * Parse and validate a scenario from a JSON string.
 */
enum LfdgStatus lfdg_scenario_from_json(const char *json, struct LfdgScenario **out);

void lfdg_scenario_free(struct LfdgScenario *scenario);

/**
 * Provision MF and EF lightpaths for the scenario's workload with `seed`.
 */
enum LfdgStatus lfdg_provision(const struct LfdgScenario *scenario,
                               uint64_t seed,
                               struct LfdgProvisioning **out);

enum LfdgStatus lfdg_provisioning_count(const struct LfdgProvisioning *p,
                                        enum LfdgClass class_,
                                        size_t *out);

/**
 * Serialize the lightpath table as JSON into `buf`.
 */
enum LfdgStatus lfdg_provisioning_to_json(const struct LfdgProvisioning *p,
                                          char *buf,
                                          size_t len,
                                          size_t *needed);

void lfdg_provisioning_free(struct LfdgProvisioning *p);

/**
 * Simulate the scenario's workload under `policy` with `seed`.
 */
enum LfdgStatus lfdg_simulate(const struct LfdgScenario *scenario,
                              enum LfdgPolicy policy,
                              uint64_t seed,
                              struct LfdgReport **out);

enum LfdgStatus lfdg_report_flow_count(const struct LfdgReport *report, size_t *out);

enum LfdgStatus lfdg_report_class_summary(const struct LfdgReport *report,
                                          enum LfdgClass class_,
                                          struct LfdgClassSummary *out);

void lfdg_report_free(struct LfdgReport *report);

/**
 * Library defaults for the given mode.
 */
struct LfdgDetectorOptions lfdg_detector_options_default(enum LfdgMode mode);

enum LfdgStatus lfdg_detector_new(const struct LfdgDetectorOptions *options,
                                  struct LfdgDetector **out);

/**
 * Feed one packet; `out` reports whether it produced a classification.
 */
enum LfdgStatus lfdg_detector_observe(struct LfdgDetector *detector,
                                      const struct LfdgPacket *packet,
                                      struct LfdgClassification *out);

enum LfdgStatus lfdg_detector_stats(const struct LfdgDetector *detector,
                                    struct LfdgDetectorStats *out);

void lfdg_detector_free(struct LfdgDetector *detector);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIGHTFDG_H */
