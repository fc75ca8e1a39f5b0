#pragma once

// Typed intra-process publish/subscribe.
//
// A topic is bound to one payload type while any endpoint on it is alive.
// Payloads travel as shared_ptr<const T>; nothing is copied or serialized.
// Subscribers with capacity 0 run on the publisher's thread. Subscribers with
// capacity N > 0 own a worker thread and a bounded queue that drops the oldest
// message on overflow.

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <typeindex>
#include <typeinfo>
#include <utility>
#include <vector>

#if defined(__GNUG__)
#include <cxxabi.h>
#endif

#include "slamkit/error.hpp"

namespace slamkit {

/// Endpoint type does not match the type already bound to the topic.
class ConnectionRefusedError : public Error {
 public:
  using Error::Error;
};

/// A callback published to the topic it is being called for.
class ReentrancyError : public Error {
 public:
  using Error::Error;
};

namespace topics {
inline constexpr const char* kImage = "dataset/image";
inline constexpr const char* kImu = "dataset/imu";
inline constexpr const char* kGps = "dataset/gps";
inline constexpr const char* kGroundTruth = "dataset/groundtruth";
inline constexpr const char* kCurrentFrame = "slam/curframe";
inline constexpr const char* kMap = "slam/map";
}  // namespace topics

/// Queue capacity that never drops.
inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

template <typename T>
std::string type_name() {
  const char* raw = typeid(T).name();
#if defined(__GNUG__)
  int status = 0;
  std::unique_ptr<char, void (*)(void*)> demangled(abi::__cxa_demangle(raw, nullptr, nullptr, &status), std::free);
  if (status == 0 && demangled) return demangled.get();
#endif
  return raw;
}

namespace detail {

struct TopicState;

// Per-thread stack of topics whose callbacks are executing.
inline std::vector<const TopicState*>& dispatch_stack() {
  thread_local std::vector<const TopicState*> stack;
  return stack;
}

struct DispatchScope {
  explicit DispatchScope(const TopicState* t) { dispatch_stack().push_back(t); }
  ~DispatchScope() { dispatch_stack().pop_back(); }
  DispatchScope(const DispatchScope&) = delete;
  DispatchScope& operator=(const DispatchScope&) = delete;
};

class SubscriberCore : public std::enable_shared_from_this<SubscriberCore> {
 public:
  using Callback = std::function<void(const std::shared_ptr<const void>&)>;

  SubscriberCore(const TopicState* topic, std::size_t capacity, Callback cb)
      : topic_(topic), capacity_(capacity), callback_(std::move(cb)) {}

  /// Starts the worker of a queued subscriber. The worker keeps the core
  /// alive so a callback may drop the last handle to its own subscription.
  void start() {
    if (capacity_ > 0) worker_ = std::thread([self = shared_from_this()] { self->run(); });
  }

  ~SubscriberCore() { close(false); }

  /// Returns false once closed.
  bool deliver(const std::shared_ptr<const void>& msg) {
    std::unique_lock lock(mutex_);
    if (closed_) return false;
    if (capacity_ == 0) {
      executing_.push_back(std::this_thread::get_id());
      lock.unlock();
      struct Done {
        SubscriberCore* self;
        ~Done() {
          std::lock_guard g(self->mutex_);
          auto it = std::find(self->executing_.begin(), self->executing_.end(), std::this_thread::get_id());
          self->executing_.erase(it);
          self->idle_.notify_all();
        }
      } done{this};
      DispatchScope scope(topic_);
      callback_(msg);
      return true;
    }
    queue_.push_back(msg);
    if (queue_.size() > capacity_) {
      queue_.pop_front();
      ++dropped_;
    }
    wake_.notify_one();
    return true;
  }

  /// Stops delivery. With `drain`, already-queued messages are processed
  /// first. Waits for running callbacks unless called from one of them.
  void close(bool drain) {
    std::unique_lock lock(mutex_);
    if (!closed_) {
      closed_ = true;
      if (!drain) queue_.clear();
      wake_.notify_all();
    }
    const auto self = std::this_thread::get_id();
    idle_.wait(lock, [&] {
      return std::all_of(executing_.begin(), executing_.end(), [&](auto id) { return id == self; });
    });
    lock.unlock();
    std::lock_guard join_lock(join_mutex_);
    if (worker_.joinable()) {
      if (worker_.get_id() == self) {
        worker_.detach();
      } else {
        worker_.join();
      }
    }
  }

  std::size_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

 private:
  void run() {
    std::unique_lock lock(mutex_);
    for (;;) {
      wake_.wait(lock, [&] { return closed_ || !queue_.empty(); });
      if (queue_.empty()) return;
      auto msg = std::move(queue_.front());
      queue_.pop_front();
      executing_.push_back(std::this_thread::get_id());
      lock.unlock();
      {
        DispatchScope scope(topic_);
        callback_(msg);
      }
      lock.lock();
      executing_.erase(std::find(executing_.begin(), executing_.end(), std::this_thread::get_id()));
      idle_.notify_all();
    }
  }

  const TopicState* topic_;
  const std::size_t capacity_;
  const Callback callback_;
  mutable std::mutex mutex_;
  std::mutex join_mutex_;
  std::condition_variable wake_;
  std::condition_variable idle_;
  std::deque<std::shared_ptr<const void>> queue_;
  std::vector<std::thread::id> executing_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
  std::thread worker_;
};

using SubscriberList = std::vector<std::shared_ptr<SubscriberCore>>;

struct TopicState {
  std::string name;
  std::type_index type = typeid(void);
  std::string type_name;
  std::size_t publishers = 0;
  std::shared_ptr<const SubscriberList> subscribers = std::make_shared<SubscriberList>();
};

struct Registry {
  std::shared_mutex mutex;
  std::map<std::string, std::shared_ptr<TopicState>, std::less<>> topics;
  bool shut_down = false;

  std::shared_ptr<TopicState> bind(const std::string& topic, std::type_index type, const std::string& tname) {
    if (topic.empty()) throw InvalidArgument("topic name must not be empty");
    if (shut_down) throw Error("messenger is shut down");
    auto& slot = topics[topic];
    if (!slot) {
      slot = std::make_shared<TopicState>();
      slot->name = topic;
    }
    const bool bound = slot->publishers > 0 || !slot->subscribers->empty();
    if (bound && slot->type != type) {
      throw ConnectionRefusedError("topic '" + topic + "' carries " + slot->type_name + ", refused endpoint of type " +
                                   tname);
    }
    slot->type = type;
    slot->type_name = tname;
    return slot;
  }
};

}  // namespace detail

template <typename T>
class Publisher {
 public:
  Publisher() = default;
  Publisher(const Publisher&) = delete;
  Publisher& operator=(const Publisher&) = delete;
  Publisher(Publisher&& o) noexcept : registry_(std::move(o.registry_)), topic_(std::move(o.topic_)) {}
  Publisher& operator=(Publisher&& o) noexcept {
    if (this != &o) {
      reset();
      registry_ = std::move(o.registry_);
      topic_ = std::move(o.topic_);
    }
    return *this;
  }
  ~Publisher() { reset(); }

  explicit operator bool() const { return topic_ != nullptr; }
  const std::string& topic() const { return topic_->name; }

  /// Returns the number of subscribers reached.
  std::size_t publish(std::shared_ptr<const T> msg) const {
    if (!topic_) throw InvalidArgument("publish on an empty publisher");
    const auto& stack = detail::dispatch_stack();
    if (std::find(stack.begin(), stack.end(), topic_.get()) != stack.end()) {
      throw ReentrancyError("callback for topic '" + topic_->name + "' published to the same topic");
    }
    std::shared_ptr<const detail::SubscriberList> subs;
    {
      std::shared_lock lock(registry_->mutex);
      subs = topic_->subscribers;
    }
    const std::shared_ptr<const void> erased = std::move(msg);
    std::size_t reached = 0;
    for (const auto& s : *subs) reached += s->deliver(erased) ? 1 : 0;
    return reached;
  }

  std::size_t publish(const T& value) const { return publish(std::make_shared<const T>(value)); }
  std::size_t publish(T&& value) const { return publish(std::make_shared<const T>(std::move(value))); }

  void reset() {
    if (!topic_) return;
    std::unique_lock lock(registry_->mutex);
    --topic_->publishers;
    topic_.reset();
    registry_.reset();
  }

 private:
  friend class Messenger;
  Publisher(std::shared_ptr<detail::Registry> r, std::shared_ptr<detail::TopicState> t)
      : registry_(std::move(r)), topic_(std::move(t)) {}

  std::shared_ptr<detail::Registry> registry_;
  std::shared_ptr<detail::TopicState> topic_;
};

/// RAII subscription; unsubscribes (discarding the queue) on destruction.
class Subscriber {
 public:
  Subscriber() = default;
  Subscriber(const Subscriber&) = delete;
  Subscriber& operator=(const Subscriber&) = delete;
  Subscriber(Subscriber&& o) noexcept
      : registry_(std::move(o.registry_)), topic_(std::move(o.topic_)), core_(std::move(o.core_)) {}
  Subscriber& operator=(Subscriber&& o) noexcept {
    if (this != &o) {
      unsubscribe();
      registry_ = std::move(o.registry_);
      topic_ = std::move(o.topic_);
      core_ = std::move(o.core_);
    }
    return *this;
  }
  ~Subscriber() { unsubscribe(); }

  explicit operator bool() const { return core_ != nullptr; }

  /// No callbacks run after this returns (except one currently executing on
  /// the calling thread). Calling it twice is a no-op.
  void unsubscribe(bool drain = false) {
    if (!core_) return;
    {
      std::unique_lock lock(registry_->mutex);
      auto next = std::make_shared<detail::SubscriberList>(*topic_->subscribers);
      std::erase(*next, core_);
      topic_->subscribers = std::move(next);
    }
    core_->close(drain);
    core_.reset();
    topic_.reset();
    registry_.reset();
  }

  /// Messages discarded by the drop-oldest policy so far.
  std::size_t dropped() const { return core_ ? core_->dropped() : 0; }

 private:
  friend class Messenger;
  Subscriber(std::shared_ptr<detail::Registry> r, std::shared_ptr<detail::TopicState> t,
             std::shared_ptr<detail::SubscriberCore> c)
      : registry_(std::move(r)), topic_(std::move(t)), core_(std::move(c)) {}

  std::shared_ptr<detail::Registry> registry_;
  std::shared_ptr<detail::TopicState> topic_;
  std::shared_ptr<detail::SubscriberCore> core_;
};

class Messenger {
 public:
  Messenger() : registry_(std::make_shared<detail::Registry>()) {}
  Messenger(const Messenger&) = delete;
  Messenger& operator=(const Messenger&) = delete;
  ~Messenger() { shutdown(false); }

  /// Process-wide instance.
  static Messenger& instance() {
    static Messenger m;
    return m;
  }

  template <typename T>
  Publisher<T> advertise(const std::string& topic) {
    std::unique_lock lock(registry_->mutex);
    auto state = registry_->bind(topic, typeid(T), type_name<T>());
    ++state->publishers;
    return Publisher<T>(registry_, std::move(state));
  }

  template <typename T>
  Subscriber subscribe(const std::string& topic, std::size_t capacity,
                       std::function<void(const std::shared_ptr<const T>&)> callback) {
    if (!callback) throw InvalidArgument("subscriber callback must not be empty");
    std::unique_lock lock(registry_->mutex);
    auto state = registry_->bind(topic, typeid(T), type_name<T>());
    auto core = std::make_shared<detail::SubscriberCore>(
        state.get(), capacity,
        [cb = std::move(callback)](const std::shared_ptr<const void>& m) { cb(std::static_pointer_cast<const T>(m)); });
    core->start();
    auto next = std::make_shared<detail::SubscriberList>(*state->subscribers);
    next->push_back(core);
    state->subscribers = std::move(next);
    return Subscriber(registry_, std::move(state), std::move(core));
  }

  /// Synchronous subscriber.
  template <typename T>
  Subscriber subscribe(const std::string& topic, std::function<void(const std::shared_ptr<const T>&)> callback) {
    return subscribe<T>(topic, 0, std::move(callback));
  }

  /// Closes every subscriber and refuses new endpoints. With `drain`, queued
  /// messages are delivered first. Idempotent.
  void shutdown(bool drain = true) {
    std::vector<std::shared_ptr<detail::SubscriberCore>> cores;
    {
      std::unique_lock lock(registry_->mutex);
      if (registry_->shut_down) return;
      registry_->shut_down = true;
      for (auto& [name, state] : registry_->topics) {
        for (const auto& c : *state->subscribers) cores.push_back(c);
        state->subscribers = std::make_shared<detail::SubscriberList>();
      }
    }
    for (const auto& c : cores) c->close(drain);
  }

  /// Number of live subscribers on `topic`.
  std::size_t subscriber_count(const std::string& topic) const {
    std::shared_lock lock(registry_->mutex);
    auto it = registry_->topics.find(topic);
    return it == registry_->topics.end() ? 0 : it->second->subscribers->size();
  }

 private:
  std::shared_ptr<detail::Registry> registry_;
};

}  // namespace slamkit
