#include "fedclust/fed/bus.hpp"

#include "fedclust/errors.hpp"

namespace fedclust::fed {

const char* message_type_name(MessageType t) {
  switch (t) {
    case MessageType::kParameters:
      return "parameters";
    case MessageType::kGlobalParameters:
      return "global_parameters";
    case MessageType::kFeatureExtremes:
      return "feature_extremes";
    case MessageType::kMinMaxTable:
      return "minmax_table";
    case MessageType::kSmpcMask:
      return "smpc_mask";
    case MessageType::kSmpcMaskInv:
      return "smpc_mask_inv";
    case MessageType::kSmpcShareA1:
      return "smpc_share_a1";
    case MessageType::kSmpcShareB2:
      return "smpc_share_b2";
    case MessageType::kSmpcPartialVa:
      return "smpc_partial_va";
    case MessageType::kSmpcPartialVb:
      return "smpc_partial_vb";
    case MessageType::kMetrics:
      return "metrics";
    case MessageType::kSiteMeanEmbedding:
      return "site_mean_embedding";
    case MessageType::kCentroids:
      return "centroids";
    case MessageType::kClusterLabels:
      return "cluster_labels";
  }
  return "?";
}

namespace {

std::size_t payload_elems(const Payload& p) {
  if (std::holds_alternative<Matrix>(p)) return std::get<Matrix>(p).size();
  if (std::holds_alternative<std::vector<double>>(p)) {
    return std::get<std::vector<double>>(p).size();
  }
  if (std::holds_alternative<std::vector<std::uint32_t>>(p)) {
    return std::get<std::vector<std::uint32_t>>(p).size();
  }
  return 0;
}

}  // namespace

void Bus::set_phase(const std::string& phase) {
  std::lock_guard lock(mu_);
  phase_ = phase;
}

std::string Bus::phase() const {
  std::lock_guard lock(mu_);
  return phase_;
}

std::string Bus::box_key(const std::string& to, MessageType type,
                         const std::string& session) {
  return to + "|" + message_type_name(type) + "|" + session;
}

void Bus::send(Message msg) {
  std::lock_guard lock(mu_);
  log_.push_back({msg.type, msg.from, msg.to, msg.session,
                  msg.phase.empty() ? phase_ : msg.phase,
                  payload_elems(msg.payload)});
  boxes_[box_key(msg.to, msg.type, msg.session)].push_back(std::move(msg));
}

Message Bus::receive(const std::string& to, MessageType type,
                     const std::string& session) {
  std::lock_guard lock(mu_);
  auto it = boxes_.find(box_key(to, type, session));
  if (it == boxes_.end() || it->second.empty()) {
    throw ProtocolError("bus: no pending '" +
                        std::string(message_type_name(type)) + "' for " + to +
                        (session.empty() ? "" : " in session " + session));
  }
  Message msg = std::move(it->second.front());
  it->second.pop_front();
  return msg;
}

std::vector<MessageRecord> Bus::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::set<MessageType> Bus::types_from_sites() const {
  std::lock_guard lock(mu_);
  std::set<MessageType> types;
  for (const auto& r : log_) {
    if (r.from.rfind("site:", 0) == 0) types.insert(r.type);
  }
  return types;
}

std::vector<MessageRecord> Bus::records_in_phase(const std::string& phase) const {
  std::lock_guard lock(mu_);
  std::vector<MessageRecord> out;
  for (const auto& r : log_) {
    if (r.phase == phase) out.push_back(r);
  }
  return out;
}

std::size_t Bus::pending() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [key, box] : boxes_) n += box.size();
  return n;
}

}  // namespace fedclust::fed
