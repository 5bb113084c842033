/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

namespace pprog {

/// Unbounded multi-producer queue. `push` fails once the box is closed;
/// `pop` keeps handing out what is left and returns nullopt when the box is
/// closed and empty.
template <class T>
class Mailbox {
 public:
  bool push(T item) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return false;
      items_.push_back(std::move(item));
    }
    cv_.notify_one();
    return true;
  }

  /// Moves from `item` only on success, so a refused item stays with the caller.
  bool try_push(T& item) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return false;
      items_.push_back(std::move(item));
    }
    cv_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    return item;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  /// Close and throw away everything still queued.
  std::vector<T> close_and_take() {
    std::vector<T> rest;
    {
      std::lock_guard lock(mu_);
      closed_ = true;
      rest.assign(std::make_move_iterator(items_.begin()), std::make_move_iterator(items_.end()));
      items_.clear();
    }
    cv_.notify_all();
    return rest;
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// Same contract as Mailbox, but `pop` returns the smallest element under
/// `Less`; equal elements come out in insertion order.
template <class T, class Less>
class OrderedMailbox {
 public:
  bool push(T item) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return false;
      heap_.push_back(Entry{std::move(item), seq_++});
      std::push_heap(heap_.begin(), heap_.end(), after_);
    }
    cv_.notify_one();
    return true;
  }

  bool try_push(T& item) {
    {
      std::lock_guard lock(mu_);
      if (closed_) return false;
      heap_.push_back(Entry{std::move(item), seq_++});
      std::push_heap(heap_.begin(), heap_.end(), after_);
    }
    cv_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !heap_.empty(); });
    if (heap_.empty()) return std::nullopt;
    std::pop_heap(heap_.begin(), heap_.end(), after_);
    T item = std::move(heap_.back().value);
    heap_.pop_back();
    return item;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::vector<T> close_and_take() {
    std::vector<T> rest;
    {
      std::lock_guard lock(mu_);
      closed_ = true;
      for (auto& e : heap_) rest.push_back(std::move(e.value));
      heap_.clear();
    }
    cv_.notify_all();
    return rest;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return heap_.size();
  }

 private:
  struct Entry {
    T value;
    std::uint64_t seq;
  };
  // Heap comparator: "a sinks below b" when a comes after b.
  struct After {
    Less less;
    bool operator()(const Entry& a, const Entry& b) const {
      if (less(b.value, a.value)) return true;
      if (less(a.value, b.value)) return false;
      return a.seq > b.seq;
    }
  };

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Entry> heap_;
  std::uint64_t seq_ = 0;
  bool closed_ = false;
  After after_{};
};

/// Test hook that parks an activity between messages.
class Gate {
 public:
  void suspend() {
    std::lock_guard lock(mu_);
    open_ = false;
  }

  void resume() {
    {
      std::lock_guard lock(mu_);
      open_ = true;
    }
    cv_.notify_all();
  }

  /// Opens the gate for good; used on teardown.
  void release() {
    {
      std::lock_guard lock(mu_);
      open_ = true;
      released_ = true;
    }
    cv_.notify_all();
  }

  bool is_open() {
    std::lock_guard lock(mu_);
    return open_ || released_;
  }

  void wait() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return open_ || released_; });
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool open_ = true;
  bool released_ = false;
};

}  // namespace pprog
