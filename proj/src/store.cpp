#include "seqvault/store.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <fcntl.h>
#include <unistd.h>

#include "seqvault/codec.hpp"

namespace fs = std::filesystem;

namespace seqvault {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'V', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kFileHeader = 4 + 2 + 8;
constexpr std::size_t kRecordHeader = 8 + 4 + 4;  // user_id, event_count, payload_len

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t read_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}
std::uint64_t read_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::string file_header(std::uint64_t schema_hash) {
    std::string h(kMagic, 4);
    put_u16(h, kVersion);
    put_u64(h, schema_hash);
    return h;
}

}  // namespace

Store::Store(std::string dir, SequenceSchema schema, StoreConfig cfg)
    : dir_(std::move(dir)), schema_(std::move(schema)), cfg_(cfg) {}

Store::~Store() {
    try {
        close();
    } catch (...) {
    }
}

std::string Store::segment_path(std::uint32_t file_id) const {
    char name[32];
    std::snprintf(name, sizeof name, "seg-%06u.sqvt", file_id);
    return (fs::path(dir_) / name).string();
}

std::string Store::journal_path() const { return (fs::path(dir_) / "journal.log").string(); }

void Store::maybe_crash(CrashPoint p) const {
    if (crash_point_ == p)
        throw CrashInjected("injected crash at point " + std::to_string(static_cast<int>(p)));
}

void Store::ensure_open() const {
    if (closed_) throw std::logic_error("store: closed");
}

std::unique_ptr<Store> Store::open(const std::string& dir, const SequenceSchema& schema,
                                   StoreConfig cfg) {
    schema.validate();
    fs::create_directories(dir);
    const fs::path schema_file = fs::path(dir) / "schema.json";
    if (fs::exists(schema_file)) {
        std::ifstream in(schema_file);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const SequenceSchema existing = SequenceSchema::from_json(text);
        if (existing.schema_hash() != schema.schema_hash())
            throw std::runtime_error(
                "store: schema mismatch, on-disk hash " +
                std::to_string(existing.schema_hash()) + " vs requested " +
                std::to_string(schema.schema_hash()));
    } else {
        std::ofstream out(schema_file, std::ios::trunc);
        out << schema.to_json() << "\n";
        if (!out) throw std::runtime_error("store: cannot write " + schema_file.string());
    }
    std::unique_ptr<Store> s(new Store(dir, schema, cfg));
    s->load();
    return s;
}

std::unique_ptr<Store> Store::open_existing(const std::string& dir, StoreConfig cfg) {
    const fs::path schema_file = fs::path(dir) / "schema.json";
    if (!fs::exists(schema_file))
        throw std::runtime_error("store: no schema at " + schema_file.string());
    std::ifstream in(schema_file);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return open(dir, SequenceSchema::from_json(text), cfg);
}

void Store::load() {
    std::vector<std::uint32_t> ids;
    for (const auto& entry : fs::directory_iterator(dir_)) {
        const std::string name = entry.path().filename().string();
        unsigned id;
        if (std::sscanf(name.c_str(), "seg-%06u.sqvt", &id) == 1)
            ids.push_back(static_cast<std::uint32_t>(id));
    }
    std::sort(ids.begin(), ids.end());
    for (std::uint32_t id : ids) scan_segment_file(id);
    active_file_ = ids.empty() ? 1 : ids.back();
    if (ids.empty()) files_[active_file_] = FileInfo{};
    replay_journal();
}

// Index rebuild walks record headers only; payloads stay on disk. A torn
// record at the end of a file (crash mid-write) truncates the valid
// prefix; later records for the same user win, matching write order.
void Store::scan_segment_file(std::uint32_t file_id) {
    const std::string path = segment_path(file_id);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("store: cannot open segment " + path);

    std::uint8_t header[kFileHeader];
    in.read(reinterpret_cast<char*>(header), kFileHeader);
    if (in.gcount() != static_cast<std::streamsize>(kFileHeader) ||
        std::memcmp(header, kMagic, 4) != 0)
        throw std::runtime_error("store: corrupt segment header in " + path);
    if (read_u16(header + 4) != kVersion)
        throw std::runtime_error("store: unsupported segment version in " + path);
    if (read_u64(header + 6) != schema_.schema_hash())
        throw std::runtime_error("store: segment " + path + " carries a different schema");

    const std::uint64_t file_size = fs::file_size(path);
    FileInfo info;
    info.bytes = kFileHeader;
    std::uint64_t at = kFileHeader;
    for (;;) {
        std::uint8_t rec[kRecordHeader];
        in.read(reinterpret_cast<char*>(rec), kRecordHeader);
        if (in.gcount() != static_cast<std::streamsize>(kRecordHeader)) break;
        const std::uint64_t user = read_u64(rec);
        const std::uint32_t count = read_u32(rec + 8);
        const std::uint32_t payload_len = read_u32(rec + 12);
        const std::uint64_t record_len = kRecordHeader + payload_len + 4;
        if (at + record_len > file_size) break;  // torn tail from a crash mid-write
        in.seekg(static_cast<std::streamoff>(payload_len + 4), std::ios::cur);
        if (!in) break;

        auto& entry = index_[user];
        if (entry.extent) {
            auto& old = files_[entry.extent->file_id];
            old.live_bytes -= entry.extent->length;
            --old.live_blocks;
        }
        entry.extent = DiskExtent{file_id, at, static_cast<std::uint32_t>(record_len), count};
        info.live_bytes += record_len;
        ++info.live_blocks;
        at += record_len;
        info.bytes = at;
    }
    in.close();
    if (file_size > info.bytes) fs::resize_file(path, info.bytes);  // drop the torn tail
    files_[file_id] = info;
}

void Store::replay_journal() {
    std::ifstream in(journal_path(), std::ios::binary);
    journal_bytes_ = 0;
    if (!in) return;
    std::vector<std::uint8_t> body;
    for (;;) {
        std::uint8_t head[8];
        in.read(reinterpret_cast<char*>(head), 8);
        if (in.gcount() != 8) break;
        const std::uint32_t len = read_u32(head);
        const std::uint32_t crc = read_u32(head + 4);
        if (len < 8 || len > (64u << 20)) break;
        body.resize(len);
        in.read(reinterpret_cast<char*>(body.data()), len);
        if (in.gcount() != static_cast<std::streamsize>(len)) break;
        if (codec::crc32_of(body) != crc) break;  // torn tail, stop replay
        const std::uint64_t user = read_u64(body.data());
        try {
            auto events = codec::unpack_events(
                schema_, std::span<const std::uint8_t>(body.data() + 8, body.size() - 8), 1);
            insert_tail(index_[user], events.at(0));
        } catch (const CorruptionError&) {
            break;
        }
        journal_bytes_ += 8 + len;
    }
}

void Store::journal_append(std::uint64_t user_id, const BehaviorEvent& ev) {
    std::string body;
    put_u64(body, user_id);
    const auto payload = codec::pack_events(schema_, {ev});
    body.append(reinterpret_cast<const char*>(payload.data()), payload.size());

    std::string rec;
    put_u32(rec, static_cast<std::uint32_t>(body.size()));
    put_u32(rec, codec::crc32_of(std::span<const std::uint8_t>(
                     reinterpret_cast<const std::uint8_t*>(body.data()), body.size())));
    rec += body;

    std::ofstream out(journal_path(), std::ios::binary | std::ios::app);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    out.flush();
    if (!out) throw std::runtime_error("store: journal write failed");
    journal_bytes_ += rec.size();
}

void Store::rewrite_journal_locked() {
    const std::string tmp = journal_path() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        std::uint64_t bytes = 0;
        for (const auto& [user, entry] : index_) {
            for (auto it = entry.tail.rbegin(); it != entry.tail.rend(); ++it) {
                std::string body;
                put_u64(body, user);
                const auto payload = codec::pack_events(schema_, {it->ev});
                body.append(reinterpret_cast<const char*>(payload.data()), payload.size());
                std::string rec;
                put_u32(rec, static_cast<std::uint32_t>(body.size()));
                put_u32(rec, codec::crc32_of(std::span<const std::uint8_t>(
                                 reinterpret_cast<const std::uint8_t*>(body.data()),
                                 body.size())));
                rec += body;
                out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
                bytes += rec.size();
            }
        }
        out.flush();
        if (!out) throw std::runtime_error("store: journal rewrite failed");
        journal_bytes_ = bytes;
    }
    fs::rename(tmp, journal_path());
}

void Store::insert_tail(Entry& entry, const BehaviorEvent& ev) {
    // Last write wins on the (timestamp, item_id) key.
    for (auto it = entry.tail.begin(); it != entry.tail.end(); ++it) {
        if (same_dedup_key(schema_, it->ev, ev)) {
            it->ev = ev;
            it->seq = next_seq_++;
            return;
        }
    }
    TailEntry te{ev, next_seq_++};
    auto pos = entry.tail.begin();
    while (pos != entry.tail.end() && event_after(schema_, pos->ev, ev)) ++pos;
    entry.tail.insert(pos, std::move(te));
}

void Store::append_event(std::uint64_t user_id, const BehaviorEvent& ev) {
    validate_event(schema_, ev);
    bool overflow = false;
    {
        std::unique_lock lock(mu_);
        ensure_open();
        journal_append(user_id, ev);
        maybe_crash(CrashPoint::AfterJournalAppend);
        auto& entry = index_[user_id];
        insert_tail(entry, ev);
        overflow = entry.tail.size() > cfg_.max_tail_events;
    }
    if (overflow) {
        const std::vector<std::uint64_t> just{user_id};
        run_merge(&just);
    }
}

std::vector<BehaviorEvent> Store::read_extent(const DiskExtent& extent) const {
    const std::string path = segment_path(extent.file_id);
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) throw std::runtime_error("store: cannot open " + path);
    std::vector<std::uint8_t> buf(extent.length);
    const ssize_t got = ::pread(fd, buf.data(), extent.length,
                                static_cast<off_t>(extent.offset));
    ::close(fd);
    if (got != static_cast<ssize_t>(extent.length))
        throw std::runtime_error("store: short extent read from " + path);
    extent_reads_.fetch_add(1, std::memory_order_relaxed);
    extent_bytes_.fetch_add(extent.length, std::memory_order_relaxed);

    const std::uint64_t user = read_u64(buf.data());
    return codec::unpack_block(
        schema_, std::span<const std::uint8_t>(buf.data() + 8, buf.size() - 8),
        path + "@" + std::to_string(extent.offset) + " user " + std::to_string(user));
}

std::vector<BehaviorEvent> Store::get_last_n(std::uint64_t user_id, std::size_t n) const {
    if (n == 0) throw std::invalid_argument("get_last_n: n must be >= 1");
    std::shared_lock lock(mu_);
    ensure_open();
    auto it = index_.find(user_id);
    if (it == index_.end()) return {};

    std::vector<BehaviorEvent> disk;
    if (it->second.extent) disk = read_extent(*it->second.extent);
    const auto& tail = it->second.tail;

    // Two-pointer merge over two newest-first runs; tail shadows disk on
    // equal dedup keys.
    std::vector<BehaviorEvent> out;
    out.reserve(std::min(n, tail.size() + disk.size()));
    std::size_t ti = 0, di = 0;
    while (out.size() < n && (ti < tail.size() || di < disk.size())) {
        if (ti < tail.size() && di < disk.size() &&
            same_dedup_key(schema_, tail[ti].ev, disk[di])) {
            out.push_back(tail[ti].ev);
            ++ti;
            ++di;
        } else if (di >= disk.size() ||
                   (ti < tail.size() && event_after(schema_, tail[ti].ev, disk[di]))) {
            out.push_back(tail[ti].ev);
            ++ti;
        } else {
            out.push_back(disk[di]);
            ++di;
        }
    }
    return out;
}

bool Store::merge_user_locked_phase(std::uint64_t user_id, MergeStats& stats) {
    std::optional<DiskExtent> extent;
    std::vector<TailEntry> tail_copy;
    std::uint64_t tail_max_seq = 0;
    {
        std::shared_lock lock(mu_);
        auto it = index_.find(user_id);
        if (it == index_.end()) return false;
        extent = it->second.extent;
        tail_copy = it->second.tail;
        for (const auto& te : tail_copy) tail_max_seq = std::max(tail_max_seq, te.seq);
    }
    const bool trimming =
        cfg_.max_history_events > 0 &&
        (extent ? extent->event_count : 0) + tail_copy.size() > cfg_.max_history_events;
    if (tail_copy.empty() && !trimming) return false;

    std::vector<BehaviorEvent> disk;
    if (extent) disk = read_extent(*extent);

    std::vector<BehaviorEvent> merged;
    merged.reserve(tail_copy.size() + disk.size());
    std::size_t ti = 0, di = 0;
    while (ti < tail_copy.size() || di < disk.size()) {
        if (ti < tail_copy.size() && di < disk.size() &&
            same_dedup_key(schema_, tail_copy[ti].ev, disk[di])) {
            merged.push_back(tail_copy[ti].ev);
            ++ti;
            ++di;
        } else if (di >= disk.size() ||
                   (ti < tail_copy.size() &&
                    event_after(schema_, tail_copy[ti].ev, disk[di]))) {
            merged.push_back(tail_copy[ti].ev);
            ++ti;
        } else {
            merged.push_back(disk[di]);
            ++di;
        }
    }
    if (cfg_.max_history_events > 0 && merged.size() > cfg_.max_history_events)
        merged.resize(cfg_.max_history_events);  // newest-first: oldest drop off

    // Write the replacement block to the active segment.
    DiskExtent fresh;
    {
        std::lock_guard io(io_mu_);
        if (fail_block_writes_)
            throw std::runtime_error("store: block write failed (injected)");
        if (files_[active_file_].bytes >= cfg_.segment_rotate_bytes) {
            ++active_file_;
            files_[active_file_] = FileInfo{};
        }
        const std::string path = segment_path(active_file_);
        const bool fresh_file = files_[active_file_].bytes == 0;
        std::ofstream out(path, std::ios::binary | std::ios::app);
        if (!out) throw std::runtime_error("store: cannot open segment " + path);
        if (fresh_file) {
            const std::string h = file_header(schema_.schema_hash());
            out.write(h.data(), static_cast<std::streamsize>(h.size()));
            files_[active_file_].bytes = kFileHeader;
        }
        std::string rec;
        put_u64(rec, user_id);
        const auto block = codec::pack_block(schema_, merged);
        rec.append(reinterpret_cast<const char*>(block.data()), block.size());
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
        out.flush();
        if (!out) throw std::runtime_error("store: segment write failed");
        fresh.file_id = active_file_;
        fresh.offset = files_[active_file_].bytes;
        fresh.length = static_cast<std::uint32_t>(rec.size());
        fresh.event_count = static_cast<std::uint32_t>(merged.size());
        files_[active_file_].bytes += rec.size();
        files_[active_file_].live_bytes += rec.size();
        ++files_[active_file_].live_blocks;
        stats.bytes_written += rec.size();
    }
    maybe_crash(CrashPoint::AfterBlockWrite);

    {
        std::unique_lock lock(mu_);
        auto& entry = index_[user_id];
        if (entry.extent) {
            auto& old = files_[entry.extent->file_id];
            old.live_bytes -= entry.extent->length;
            --old.live_blocks;
        }
        entry.extent = fresh;
        // Drop exactly the snapshotted tail entries; appends that landed
        // since the snapshot stay and shadow the block on reads.
        std::erase_if(entry.tail,
                      [tail_max_seq](const TailEntry& te) { return te.seq <= tail_max_seq; });
    }
    maybe_crash(CrashPoint::AfterIndexRepoint);
    stats.events_merged += merged.size();
    return true;
}

MergeStats Store::run_merge(const std::vector<std::uint64_t>* user_filter) {
    std::lock_guard one(merge_mu_);
    MergeStats stats;
    std::vector<std::uint64_t> users;
    {
        std::shared_lock lock(mu_);
        ensure_open();
        if (user_filter) {
            users = *user_filter;
        } else {
            users.reserve(index_.size());
            for (const auto& [user, entry] : index_) users.push_back(user);
        }
    }
    std::sort(users.begin(), users.end());

    for (std::uint64_t user : users) {
        try {
            if (merge_user_locked_phase(user, stats)) ++stats.users_merged;
        } catch (const CrashInjected&) {
            throw;
        } catch (const std::exception&) {
            ++stats.users_failed;  // this user keeps its pre-merge state
        }
    }

    {
        std::unique_lock lock(mu_);
        rewrite_journal_locked();
        std::vector<std::uint32_t> dead;
        for (const auto& [id, info] : files_)
            if (id != active_file_ && info.live_blocks == 0) dead.push_back(id);
        for (std::uint32_t id : dead) {
            std::error_code ec;
            fs::remove(segment_path(id), ec);
            files_.erase(id);
            ++stats.files_deleted;
        }
    }
    return stats;
}

StoreStats Store::stats() const {
    std::shared_lock lock(mu_);
    ensure_open();
    StoreStats st;
    for (const auto& [id, info] : files_) {
        st.disk_bytes += info.bytes;
        st.live_bytes += info.live_bytes;
    }
    st.index_entries = index_.size();
    for (const auto& [user, entry] : index_) st.tail_events += entry.tail.size();
    st.journal_bytes = journal_bytes_;
    return st;
}

IoStats Store::io_stats() const {
    return IoStats{extent_reads_.load(std::memory_order_relaxed),
                   extent_bytes_.load(std::memory_order_relaxed)};
}

std::vector<std::uint64_t> Store::user_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::uint64_t> ids;
    ids.reserve(index_.size());
    for (const auto& [user, entry] : index_) ids.push_back(user);
    std::sort(ids.begin(), ids.end());
    return ids;
}

void Store::close() {
    std::unique_lock lock(mu_);
    closed_ = true;
}

}  // namespace seqvault
