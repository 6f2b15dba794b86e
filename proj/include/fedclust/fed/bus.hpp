#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "fedclust/linalg/matrix.hpp"

namespace fedclust::fed {

// Every cross-node transfer in the simulation is one of these. There is
// deliberately no message type for raw records or per-patient values; the
// audit tests assert that the set of types seen on a run stays inside the
// allowed contract.
enum class MessageType : std::uint8_t {
  kParameters = 0,     // site -> server: locally trained parameter vector
  kGlobalParameters,   // server -> site
  kFeatureExtremes,    // site -> server: per-feature min/max only
  kMinMaxTable,        // server -> site
  kSmpcMask,           // server -> site (setup)
  kSmpcMaskInv,        // server -> site (setup)
  kSmpcShareA1,        // site -> server, server -> site
  kSmpcShareB2,        // site -> server, server -> site
  kSmpcPartialVa,      // site -> server
  kSmpcPartialVb,      // site -> server
  kMetrics,            // site -> server
  kSiteMeanEmbedding,  // site -> server (CBFL only)
  kCentroids,          // server -> site (CBFL only)
  kClusterLabels,      // server -> site
};

const char* message_type_name(MessageType t);

using Payload = std::variant<std::monostate, Matrix, std::vector<double>,
                             std::vector<std::uint32_t>>;

struct Message {
  MessageType type{};
  std::string from;
  std::string to;
  std::string session;  // isolates concurrent protocol sessions
  Payload payload;
  // Audit phase; empty inherits the bus-wide phase. Explicit tags keep
  // concurrent repetitions from mislabeling each other's traffic.
  std::string phase;
};

struct MessageRecord {
  MessageType type{};
  std::string from;
  std::string to;
  std::string session;
  std::string phase;
  std::size_t payload_elems = 0;
};

inline std::string site_address(int site_id) {
  return "site:" + std::to_string(site_id);
}
inline const char* server_address() { return "server"; }

// In-process bus: typed mailboxes plus an append-only audit log. Thread-safe;
// concurrent sessions stay separated by their session tag.
class Bus {
 public:
  void set_phase(const std::string& phase);
  std::string phase() const;

  void send(Message msg);
  // Pops the oldest message matching (to, type, session); throws
  // ProtocolError when none is queued.
  Message receive(const std::string& to, MessageType type,
                  const std::string& session = "");

  std::vector<MessageRecord> log() const;
  // Distinct message types sent from any "site:*" address.
  std::set<MessageType> types_from_sites() const;
  // Records whose phase matches.
  std::vector<MessageRecord> records_in_phase(const std::string& phase) const;
  std::size_t pending() const;

 private:
  mutable std::mutex mu_;
  std::string phase_ = "setup";
  std::vector<MessageRecord> log_;
  std::map<std::string, std::deque<Message>> boxes_;

  static std::string box_key(const std::string& to, MessageType type,
                             const std::string& session);
};

}  // namespace fedclust::fed
