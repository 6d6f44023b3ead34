#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqvault/schema.hpp"

namespace seqvault {

struct StoreConfig {
    std::size_t max_tail_events = 256;     // synchronous per-user merge past this
    std::size_t max_history_events = 0;    // 0 = keep everything
    std::uint64_t segment_rotate_bytes = 64ull << 20;
};

// Test hooks simulating a process crash at a specific point.
enum class CrashPoint : int {
    None = 0,
    AfterJournalAppend,
    AfterBlockWrite,    // block flushed, index not repointed
    AfterIndexRepoint,  // index repointed, journal not yet rewritten
};

struct CrashInjected : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DiskExtent {
    std::uint32_t file_id = 0;
    std::uint64_t offset = 0;  // of the user_id header
    std::uint32_t length = 0;  // whole record, header through checksum
    std::uint32_t event_count = 0;
};

struct MergeStats {
    std::size_t users_merged = 0;
    std::size_t users_failed = 0;
    std::size_t events_merged = 0;
    std::uint64_t bytes_written = 0;
    std::size_t files_deleted = 0;
};

struct StoreStats {
    std::uint64_t disk_bytes = 0;   // segment files on disk
    std::uint64_t live_bytes = 0;   // blocks the index still points at
    std::size_t index_entries = 0;
    std::size_t tail_events = 0;
    std::uint64_t journal_bytes = 0;
};

struct IoStats {
    std::uint64_t extent_reads = 0;
    std::uint64_t extent_bytes = 0;
};

// Embedded single-node sequence store: hash index in memory, packed
// per-user blocks on disk, an in-memory write tail per user journaled for
// crash safety, and a sequence-level merge that rewrites one user's
// extent at a time. One live extent per user keeps reads at a single
// locate.
class Store {
  public:
    /// Opens or creates; an existing store must carry the same schema
    /// (compared by hash, both reported on mismatch).
    static std::unique_ptr<Store> open(const std::string& dir, const SequenceSchema& schema,
                                       StoreConfig cfg = {});
    /// Opens an existing store using its persisted schema.
    static std::unique_ptr<Store> open_existing(const std::string& dir, StoreConfig cfg = {});

    ~Store();
    Store(const Store&) = delete;
    Store& operator=(const Store&) = delete;

    void close();

    /// Journals, then lands in the user's tail; visible to get_last_n
    /// immediately. Duplicate (timestamp, item_id) keys: last write wins.
    void append_event(std::uint64_t user_id, const BehaviorEvent& ev);

    /// Newest-first, deduplicated merge of tail and disk extent, at most
    /// one extent read. Unknown user yields an empty list.
    std::vector<BehaviorEvent> get_last_n(std::uint64_t user_id, std::size_t n) const;

    MergeStats run_merge(const std::vector<std::uint64_t>* user_filter = nullptr);

    StoreStats stats() const;
    IoStats io_stats() const;
    const SequenceSchema& schema() const { return schema_; }
    const std::string& dir() const { return dir_; }
    std::vector<std::uint64_t> user_ids() const;

    // Test hooks.
    void set_crash_point(CrashPoint p) { crash_point_ = p; }
    void set_block_write_failure(bool fail) { fail_block_writes_ = fail; }

  private:
    struct TailEntry {
        BehaviorEvent ev;
        std::uint64_t seq = 0;
    };
    struct Entry {
        std::optional<DiskExtent> extent;
        std::vector<TailEntry> tail;  // newest-first
    };
    struct FileInfo {
        std::uint64_t bytes = 0;       // valid prefix length
        std::uint64_t live_bytes = 0;  // blocks still referenced
        std::size_t live_blocks = 0;
    };

    Store(std::string dir, SequenceSchema schema, StoreConfig cfg);
    void load();
    void scan_segment_file(std::uint32_t file_id);
    void replay_journal();
    void journal_append(std::uint64_t user_id, const BehaviorEvent& ev);
    void rewrite_journal_locked();
    void insert_tail(Entry& entry, const BehaviorEvent& ev);
    std::vector<BehaviorEvent> read_extent(const DiskExtent& extent) const;
    bool merge_user_locked_phase(std::uint64_t user_id, MergeStats& stats);
    std::string segment_path(std::uint32_t file_id) const;
    std::string journal_path() const;
    void maybe_crash(CrashPoint p) const;
    void ensure_open() const;

    std::string dir_;
    SequenceSchema schema_;
    StoreConfig cfg_;
    bool closed_ = false;

    mutable std::shared_mutex mu_;        // index + tails
    std::mutex io_mu_;                    // segment/journal writes
    std::mutex merge_mu_;                 // one merge job at a time
    std::unordered_map<std::uint64_t, Entry> index_;
    std::map<std::uint32_t, FileInfo> files_;
    std::uint32_t active_file_ = 0;
    std::uint64_t next_seq_ = 1;
    std::uint64_t journal_bytes_ = 0;

    mutable std::atomic<std::uint64_t> extent_reads_{0};
    mutable std::atomic<std::uint64_t> extent_bytes_{0};

    CrashPoint crash_point_ = CrashPoint::None;
    bool fail_block_writes_ = false;
};

}  // namespace seqvault
