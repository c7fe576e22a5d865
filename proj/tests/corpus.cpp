#include "corpus.hpp"

#include <map>

namespace corpus {

// One program, many small functions. Drivers pass arguments in rdi/rsi/rdx;
// loops and recursion mask their controlling values so any 64-bit input is
// safe. Nothing reads a caller-saved register after a call and nothing reads
// a return-address slot, so the native and rewritten worlds stay comparable.
static const char kSource[] = R"(
.global g_base 7
.global g_acc 0
.global g_lim 100
.global g_out 0

; --- figure-one shape: the classic two-arm diamond -----------------------

.func target
  mov rax, rdi
  cmp rax, 0
  jne other
  mov rdi, 1
  jmp done
other:
  mov rdi, 2
done:
  ret
.liveout rdi

; --- straight line -------------------------------------------------------

.func sl_mov
  mov rax, rdi
  add rax, 0x1234
  sub rax, 0x1234
  xor rax, 0
  or rax, 0
  and rax, -1
  ret

.func sl_arith2
  mov rax, rdi
  add rax, rsi
  add rax, 100
  sub rax, 1
  neg rax
  neg rax
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func sl_imm_wide
  mov rax, 0x8000000000000000
  mov rcx, 0xffffffffffffffff
  xor rax, rcx
  add rax, rdi
  mov rdx, 0x7fffffffffffffff
  and rax, rdx
  sub rax, 0
  or rax, 0
  ret

.func sl_logic
  mov rax, rdi
  and rax, rsi
  mov rcx, rdi
  or rcx, rsi
  xor rax, rcx
  and rax, 0x00ffffffffffff00
  or rax, 0x0f
  xor rax, 0xff
  sub rax, 0
  ret

.func sl_shifts
  mov rax, rdi
  mov rcx, rsi
  and rcx, 31
  shl rax, rcx
  mov rdx, rax
  shr rdx, 3
  xor rax, rdx
  shl rax, 1
  shr rax, 2
  ret

.func sl_negnot
  mov rax, rdi
  not rax
  neg rax
  add rax, rdi
  mov rcx, 0x5555555555555555
  xor rax, rcx
  add rax, 123456789
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func sl_lea
  lea rax, [rdi+8]
  lea rax, [rax+120]
  lea rcx, [rsi-16]
  add rax, rcx
  lea rax, [rax+0]
  mov rcx, 0x33
  add rax, rcx
  sub rax, 3
  ret

.func sl_cmov
  mov rax, 11
  mov rcx, 22
  cmp rdi, rsi
  cmovb rax, rcx
  cmove rax, rdi
  mov rdx, 7
  cmova rdx, rax
  mov rax, rdx
  add rax, 0
  ret

.func sl_stack_xchg
  push rdi
  mov rax, 0x1000
  xchg rax, [rsp+0]
  pop rcx
  add rax, rcx
  push rax
  pop rdx
  add rax, rdx
  sub rax, 0x1000
  or rax, 0
  ret

.func sl_movsx
  push rdi
  movsx8 rax, byte [rsp+0]
  pop rcx
  mov rdx, 0x80
  push rdx
  movsx8 rcx, byte [rsp+0]
  pop rdx
  add rax, rcx
  sub rax, 0
  or rax, 0
  ret

.func sl_pushf
  cmp rdi, 5
  pushf
  pop rax
  and rax, 0x41
  mov rcx, rax
  shr rcx, 6
  or rax, rcx
  and rax, 3
  ret

.func sl_popf
  mov rax, rdi
  and rax, 0x41
  push rax
  popf
  mov rax, 77
  mov rcx, 88
  cmove rax, rcx
  mov rdx, 99
  cmovb rax, rdx
  ret

.func sl_globals
  mov rax, [g_base]
  add rax, rdi
  mov [g_acc], rax
  mov rcx, [g_lim]
  add rax, rcx
  add rax, 5
  mov rdx, 0x77
  add rax, rdx
  or rax, 0
  ret

.func sl_table_read
  and rdi, 1
  shl rdi, 3
  lea rax, [tab_sl]
  add rax, rdi
sltr_a:
  mov rax, [rax+0]
sltr_b:
  lea rcx, [tab_sl]
  mov rcx, [rcx+0]
  sub rax, rcx
  shl rax, 1
  or rax, 3
  ret
.addrtable tab_sl: sltr_a, sltr_b

; --- diamonds, one per condition ----------------------------------------

.func br_e
  cmp rdi, rsi
  je bre_t
  mov rax, 10
  add rax, 1
  jmp bre_d
bre_t:
  mov rax, 20
  add rax, 2
bre_d:
  or rax, 0
  ret

.func br_ne
  cmp rdi, rsi
  jne brn_t
  mov rax, 30
  add rax, 3
  jmp brn_d
brn_t:
  mov rax, 40
  add rax, 4
brn_d:
  or rax, 0
  ret

.func br_b
  cmp rdi, rsi
  jb brb_t
  mov rax, 50
  add rax, 5
  jmp brb_d
brb_t:
  mov rax, 60
  add rax, 6
brb_d:
  or rax, 0
  ret

.func br_ae
  cmp rdi, rsi
  jae bra_t
  mov rax, 70
  add rax, 7
  jmp bra_d
bra_t:
  mov rax, 80
  add rax, 8
bra_d:
  or rax, 0
  ret

.func br_be
  cmp rdi, rsi
  jbe brbe_t
  mov rax, 90
  add rax, 9
  jmp brbe_d
brbe_t:
  mov rax, 110
  add rax, 11
brbe_d:
  or rax, 0
  ret

.func br_a
  cmp rdi, rsi
  ja brha_t
  mov rax, 120
  add rax, 12
  jmp brha_d
brha_t:
  mov rax, 130
  add rax, 13
brha_d:
  or rax, 0
  ret

.func br_nested
  cmp rdi, rsi
  jb bn_lo
  cmp rdi, 100
  je bn_eq
  mov rax, 0x11
  jmp bn_d
bn_eq:
  mov rax, 0x22
  jmp bn_d
bn_lo:
  cmp rsi, 200
  ja bn_big
  mov rax, 0x33
  jmp bn_d
bn_big:
  mov rax, 0x44
bn_d:
  add rax, 1
  ret

.func br_ladder
  and rdi, 3
  cmp rdi, 0
  je bl_0
  cmp rdi, 1
  je bl_1
  cmp rdi, 2
  je bl_2
  mov rax, 333
  jmp bl_d
bl_0:
  mov rax, 100
  jmp bl_d
bl_1:
  mov rax, 111
  jmp bl_d
bl_2:
  mov rax, 222
bl_d:
  or rax, 0
  ret

.func br_flags_reuse
  cmp rdi, rsi
  je fr_e
  jb fr_b
  mov rax, 1
  jmp fr_d
fr_e:
  mov rax, 2
  jmp fr_d
fr_b:
  mov rax, 3
fr_d:
  add rax, 40
  ret

; --- loops ---------------------------------------------------------------

.func loop_sum
  and rdi, 31
  xor rax, rax
  xor rcx, rcx
ls_h:
  cmp rcx, rdi
  jae ls_d
  add rax, rcx
  add rcx, 1
  jmp ls_h
ls_d:
  or rax, 0
  ret

.func loop_down
  and rdi, 31
  mov rax, 0
ld_h:
  cmp rdi, 0
  je ld_d
  add rax, rdi
  sub rdi, 1
  jmp ld_h
ld_d:
  add rax, 7
  ret

.func loop_nested
  and rdi, 7
  and rsi, 7
  xor rax, rax
  xor rcx, rcx
ln_o:
  cmp rcx, rdi
  jae ln_done
  xor rdx, rdx
ln_i:
  cmp rdx, rsi
  jae ln_oi
  add rax, rcx
  add rax, rdx
  add rax, 1
  add rdx, 1
  jmp ln_i
ln_oi:
  add rcx, 1
  jmp ln_o
ln_done:
  or rax, 0
  ret

.func loop_break
  and rdi, 15
  mov r8, rsi
  and r8, 15
  xor rax, rax
  xor rcx, rcx
lb_h:
  cmp rcx, rdi
  jae lb_d
  mov rdx, rcx
  add rdx, rdx
  add rdx, rcx
  cmp rdx, r8
  jae lb_d
  add rax, 5
  add rcx, 1
  jmp lb_h
lb_d:
  add rax, rcx
  ret

.func loop_stride
  and rdi, 0xff
lst_h:
  cmp rdi, 13
  jb lst_d
  sub rdi, 13
  jmp lst_h
lst_d:
  mov rax, rdi
  add rax, 0x40
  ret

; --- switches ------------------------------------------------------------

.func sw_w4
  and rdi, 3
  shl rdi, 3
  lea rcx, [tab_w4]
  add rcx, rdi
  mov rcx, [rcx+0]
sw4_site:
  jmp rcx
sw4_a:
  mov rax, 1000
  jmp sw4_d2
sw4_b:
  mov rax, 2000
  jmp sw4_d2
sw4_c:
  mov rax, 3000
  jmp sw4_d2
sw4_d:
  mov rax, 4000
sw4_d2:
  or rax, 0
  ret
.jumptable sw4_site: sw4_a, sw4_b, sw4_c, sw4_d
.addrtable tab_w4: sw4_a, sw4_b, sw4_c, sw4_d

.func sw_w2
  and rdi, 3
  shl rdi, 3
  lea rcx, [tab_w2]
  add rcx, rdi
  mov rcx, [rcx+0]
  mov rax, 5
  mov rdx, 100
sw2_site:
  jmp rcx
sw2_a:
  add rax, rdx
sw2_b:
  add rax, rdx
sw2_c:
  add rax, rdx
sw2_d:
  add rax, rdx
  or rax, 0
  ret
.jumptable sw2_site: sw2_a, sw2_b, sw2_c, sw2_d
.addrtable tab_w2: sw2_a, sw2_b, sw2_c, sw2_d

.func sw_w1
  and rdi, 3
  mov rax, rdi
  shl rax, 4
  add rax, 0x21
  shl rdi, 3
  lea rcx, [tab_w1]
  add rcx, rdi
  mov rcx, [rcx+0]
sw1_site:
  jmp rcx
sw1_a:
  ret
sw1_b:
  ret
sw1_c:
  ret
sw1_d:
  ret
.jumptable sw1_site: sw1_a, sw1_b, sw1_c, sw1_d
.addrtable tab_w1: sw1_a, sw1_b, sw1_c, sw1_d

.func sw_mix
  and rdi, 7
  shl rdi, 3
  lea rcx, [tab_mix]
  add rcx, rdi
  mov rcx, [rcx+0]
  mov rax, 9
swm_site:
  jmp rcx
swm_a:
  add rax, 100
  jmp swm_d
swm_b:
  add rax, 200
  jmp swm_d
swm_c:
  add rax, 300
  jmp swm_d
swm_e:
  add rax, 400
swm_d:
  or rax, 0
  ret
.jumptable swm_site: swm_a, swm_b, swm_c, swm_e
.addrtable tab_mix: swm_a, swm_b, swm_a, swm_c, swm_b, swm_e, swm_c, swm_a

; --- calls ---------------------------------------------------------------

.func nat_add
  mov rax, rdi
  add rax, rsi
  xor rax, 0x3c
  ret

.func nat_mid
  mov rsi, 9
  call sl_arith2
  add rax, 1
  ret

.func call_leaf
  call sl_arith2
  add rax, 3
  mov rcx, rax
  add rax, rcx
  sub rax, 1
  mov rdx, 0x99
  add rax, rdx
  or rax, 0
  ret

.func call_two
  mov rbx, rsi
  call sl_mov
  mov rdi, rax
  mov rsi, rbx
  call sl_arith2
  add rax, rbx
  mov rcx, 0xabc
  add rax, rcx
  or rax, 0
  ret

.func chain_c3
  mov rax, rdi
  add rax, 1000
  or rax, 0
  and rax, -1
  add rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func chain_c2
  call chain_c3
  add rax, 1
  mov rcx, 0x11
  add rax, rcx
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func call_chain
  call chain_c2
  add rax, 1
  sub rax, 0
  xor rax, 0
  or rax, 0
  ret

.func call_native
  call nat_add
  add rax, 17
  mov rcx, 0x55
  add rax, rcx
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func call_mixed
  call nat_mid
  mov rcx, rax
  mov rdi, rcx
  mov rsi, rax
  call nat_add
  add rax, 2
  or rax, 0
  add rax, 0
  ret

.func call_saves
  mov rbx, rdi
  mov r12, rsi
  mov r13, 21
  call sl_mov
  add rax, rbx
  add rax, r12
  add rax, r13
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret
.liveout rbx, r12

.func call_argshuffle
  mov rcx, rdi
  mov rdi, rdx
  mov rsi, rcx
  call sl_arith2
  add rax, 5
  mov rcx, 0x44
  add rax, rcx
  or rax, 0
  ret

; --- recursion -----------------------------------------------------------

.func fact_core
  mov r8, 0x1234
  cmp rdi, 0
  je fc_b
  push rdi
  sub rdi, 1
  call fact_core
  pop rcx
  add rax, rcx
  ret
fc_b:
  mov rax, 0
  ret

.func rec_fact
  and rdi, 7
  add rdi, 1
  call fact_core
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func rd_core
  mov r8, 0x4321
  cmp rdi, 0
  je rdc_b
  push rdi
  sub rdi, 1
  call rd_core
  pop rcx
  xor rax, rcx
  ret
rdc_b:
  mov rax, 0x5a
  ret

.func rec_depth10
  and rdi, 7
  add rdi, 3
  call rd_core
  or rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func me_core
  cmp rdi, 0
  jne me_r
  mov rax, 1
  or rax, 0
  ret
me_r:
  sub rdi, 1
  call mo_core
  ret

.func mo_core
  cmp rdi, 0
  jne mo_r
  mov rax, 0
  or rax, 0
  ret
mo_r:
  sub rdi, 1
  call me_core
  ret

.func rec_even
  and rdi, 15
  call me_core
  or rax, 0
  add rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

.func rec_odd
  and rdi, 15
  call mo_core
  or rax, 0
  add rax, 0
  add rax, 0x111
  sub rax, 0x111
  ret

; --- tail jumps ----------------------------------------------------------

.func tail_plain
  add rdi, 5
  add rsi, 6
  mov rcx, 9
  add rdi, rcx
  mov rdx, 1
  jmp sl_arith2

.func tail_cond
  cmp rdi, rsi
  jb tc_t
  mov rax, 0xbeef
  add rax, rsi
  or rax, 1
  ret
tc_t:
  add rdi, 1
  mov rcx, 0x7
  jmp sl_mov

; --- frames and the stack ------------------------------------------------

.func frame_basic
  push rbp
  mov rbp, rsp
  sub rsp, 32
  mov [rsp+8], rdi
  mov [rsp+16], rsi
  mov rax, [rsp+8]
  add rax, [rsp+16]
  mov rcx, 77
  mov [rsp+24], rcx
  add qword [rsp+24], 5
  mov rcx, [rsp+24]
  add rax, rcx
  mov rsp, rbp
  pop rbp
  ret

.func frame_leave
  push rbp
  mov rbp, rsp
  sub rsp, 16
  mov [rsp+0], rdi
  mov rax, [rsp+0]
  add rax, rsi
  mov rcx, 0x345
  add rax, rcx
  sub rax, 0x45
  leave
  ret

.func frame_loop
  push rbp
  mov rbp, rsp
  sub rsp, 16
  and rdi, 15
  mov rcx, 0
  mov [rsp+8], rcx
flo_h:
  cmp rcx, rdi
  jae flo_d
  mov rdx, [rsp+8]
  add rdx, rcx
  mov [rsp+8], rdx
  add rcx, 1
  jmp flo_h
flo_d:
  mov rax, [rsp+8]
  add rax, rsi
  mov rsp, rbp
  pop rbp
  ret

.func frame_args3
  sub rsp, 24
  mov [rsp+0], rdi
  mov [rsp+8], rsi
  mov [rsp+16], rdx
  xor rax, rax
  add rax, [rsp+0]
  add rax, [rsp+8]
  add rax, [rsp+16]
  add rsp, 24
  ret

.func frame_lea
  sub rsp, 16
  lea rax, [rsp+8]
  mov rcx, rax
  sub rcx, rsp
  mov rdx, rcx
  shl rdx, 4
  add rax, rdx
  sub rax, rsp
  add rsp, 16
  or rax, 0
  ret

.func frame_deep
  push rdi
  push rsi
  mov rax, [rsp+0]
  add rax, [rsp+8]
  push rax
  mov rcx, [rsp+0]
  add rax, rcx
  add rsp, 8
  pop rcx
  pop rdx
  add rax, rcx
  add rax, rdx
  or rax, 0
  ret
.liveout rcx, rdx

; --- boundary values and long blocks -------------------------------------

.func wide_cmp
  mov rax, 0
  mov rcx, 0x8000000000000000
  cmp rdi, rcx
  jae wc_hi
  add rax, 100
  jmp wc_j
wc_hi:
  add rax, 200
wc_j:
  cmp rsi, rdi
  jbe wc_d
  add rax, 7
wc_d:
  or rax, 0
  ret
.liveout rcx

.func wide_shift
  mov rcx, rdi
  and rcx, 63
  mov rax, 1
  shl rax, rcx
  mov rdx, rax
  shr rdx, 1
  add rax, rdx
  shr rax, 2
  add rax, 0x101
  ret

.func edge_carry
  mov rax, rdi
  add rax, rax
  pushf
  pop rcx
  and rcx, 1
  add rax, rcx
  mov rdx, 0xffffffffffffffff
  add rax, rdx
  pushf
  pop rdx
  and rdx, 0x41
  add rax, rdx
  or rax, 0
  ret

.func big_line
  mov rax, rdi
  mov rcx, rax
  shl rcx, 2
  add rax, rcx
  xor rax, 0x1f2f3f4f
  mov rdx, rax
  shr rdx, 7
  add rax, rdx
  lea rcx, [rax+100]
  sub rcx, 3
  add rax, rcx
  not rax
  neg rax
  mov rdx, 0xfffffffffffff
  and rax, rdx
  mov rcx, 0x1234567
  or rax, rcx
  xor rax, 0x89ab
  mov rdx, rax
  shl rdx, 3
  sub rax, 1
  add rax, rdx
  shr rax, 1
  mov rcx, rax
  and rcx, 0xffff
  add rax, rcx
  xor rax, 0x5a5a
  or rax, 1
  ret

; --- globals as outputs --------------------------------------------------

.func glob_rmw
  lea rcx, [g_out]
  mov rdx, 5
  mov [rcx+0], rdx
  add qword [rcx+0], 10
  sub qword [rcx+0], 3
  mov rax, [rcx+0]
  add rax, rdi
  ret

.func glob_mirror
  mov rax, rdi
  and rax, 0xffff
  mov [g_acc], rax
  mov rcx, [g_acc]
  add rcx, rcx
  mov [g_out], rcx
  mov rax, [g_out]
  add rax, 3
  ret

; --- register pressure ---------------------------------------------------

.func press_regs
  mov rax, rdi
  mov rcx, rdi
  mov rdx, rsi
  mov r8, rdi
  mov r9, rsi
  mov r10, rdi
  mov r11, rsi
  mov rbx, rdi
  mov r12, rsi
  mov r13, rdi
  mov r14, rsi
  mov r15, rdi
  add rax, rcx
  cmp rdi, rsi
  jb pr_t
  add rax, rdx
  add rax, r8
  jmp pr_d
pr_t:
  add rax, r9
  add rax, r10
pr_d:
  add rax, r11
  add rax, rbx
  add rax, r12
  add rax, r13
  add rax, r14
  add rax, r15
  ret

.func press_call
  mov rbx, rdi
  mov r12, rsi
  mov r13, rdi
  mov r14, rsi
  mov r15, rdi
  call sl_mov
  add rax, rbx
  add rax, r12
  add rax, r13
  add rax, r14
  add rax, r15
  add rax, 0x111
  sub rax, 0x111
  ret
)";

static const std::vector<Fn> kTranslated = {
    {"target", 1},       {"sl_mov", 1},         {"sl_arith2", 2},
    {"sl_imm_wide", 1},  {"sl_logic", 2},       {"sl_shifts", 2},
    {"sl_negnot", 1},    {"sl_lea", 2},         {"sl_cmov", 2},
    {"sl_stack_xchg", 1},{"sl_movsx", 1},       {"sl_pushf", 1},
    {"sl_popf", 1},      {"sl_globals", 1},     {"sl_table_read", 1},
    {"br_e", 2},         {"br_ne", 2},          {"br_b", 2},
    {"br_ae", 2},        {"br_be", 2},          {"br_a", 2},
    {"br_nested", 2},    {"br_ladder", 1},      {"br_flags_reuse", 2},
    {"loop_sum", 1},     {"loop_down", 1},      {"loop_nested", 2},
    {"loop_break", 2},   {"loop_stride", 1},    {"sw_w4", 1},
    {"sw_w2", 1},        {"sw_w1", 1},          {"sw_mix", 1},
    {"call_leaf", 2},    {"call_two", 2},       {"chain_c3", 1},
    {"chain_c2", 1},     {"call_chain", 1},     {"call_native", 2},
    {"call_mixed", 1},   {"call_saves", 2},     {"call_argshuffle", 3},
    {"rec_fact", 1},     {"rec_depth10", 1},    {"rec_even", 1},
    {"rec_odd", 1},      {"tail_plain", 2},     {"tail_cond", 2},
    {"frame_basic", 2},  {"frame_leave", 2},    {"frame_loop", 2},
    {"frame_args3", 3},  {"frame_lea", 1},      {"frame_deep", 2},
    {"wide_cmp", 2},     {"wide_shift", 1},     {"edge_carry", 1},
    {"big_line", 1},     {"glob_rmw", 1},       {"glob_mirror", 1},
    {"press_regs", 2},   {"press_call", 2},
};

// Translated too, but only ever driven through their masked wrappers: called
// raw with a huge argument they would recurse past any stack.
static const std::vector<Fn> kCores = {
    {"fact_core", 1}, {"rd_core", 1}, {"me_core", 1}, {"mo_core", 1}};

static const std::vector<Fn> kNative = {{"nat_add", 2}, {"nat_mid", 1}};

static const std::vector<Fn> kBranchy = {
    {"target", 1},     {"br_e", 2},      {"br_ne", 2},       {"br_b", 2},
    {"br_ae", 2},      {"br_be", 2},     {"br_a", 2},        {"br_nested", 2},
    {"br_ladder", 1},  {"br_flags_reuse", 2}, {"loop_sum", 1},
    {"loop_break", 2}, {"loop_stride", 1},    {"tail_cond", 2},
    {"wide_cmp", 2},   {"press_regs", 2},     {"frame_loop", 2},
    {"loop_down", 1},  {"loop_nested", 2},    {"rec_even", 1}};

const std::string& source() {
  static const std::string s = kSource;
  return s;
}

const std::vector<Fn>& translated() { return kTranslated; }
const std::vector<Fn>& native_helpers() { return kNative; }
const std::vector<Fn>& branchy() { return kBranchy; }

const char* config_name(Config c) {
  switch (c) {
    case Config::none: return "none";
    case Config::p1: return "p1";
    case Config::p2: return "p2";
    case Config::p3for: return "p3for";
    case Config::p3array: return "p3array";
    case Config::confusion: return "confusion";
    case Config::all: return "all";
  }
  return "?";
}

rf::ObfConfig make_config(Config c, uint64_t seed) {
  rf::ObfConfig cfg;
  cfg.seed = seed;
  for (const Fn& f : kTranslated) cfg.only.push_back(f.name);
  for (const Fn& f : kCores) cfg.only.push_back(f.name);
  switch (c) {
    case Config::none: break;
    case Config::p1: cfg.p1 = true; break;
    case Config::p2: cfg.p2 = true; break;
    case Config::p3for: cfg.p3 = rf::P3Mode::for_loop; break;
    case Config::p3array: cfg.p3 = rf::P3Mode::array; break;
    case Config::confusion: cfg.confusion = true; break;
    case Config::all:
      cfg.p1 = cfg.p2 = cfg.confusion = true;
      cfg.p3 = rf::P3Mode::for_loop;
      break;
  }
  return cfg;
}

const rf::ObfResult& build(Config c, uint64_t seed) {
  static std::map<std::pair<int, uint64_t>, rf::ObfResult> cache;
  auto key = std::make_pair(static_cast<int>(c), seed);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, rf::obfuscate_source(source(), make_config(c, seed)))
             .first;
  return it->second;
}

std::vector<uint64_t> args_for(int nargs, uint64_t salt) {
  static const uint64_t edge[] = {
      0, 1, 2, 5, 13, 0xff, 0x100, 0xffff, 0x8000000000000000ull,
      0xffffffffffffffffull, 0x7fffffffffffffffull, 100, 200};
  rf::Rng rng(0x9d0c57a1 ^ salt);
  std::vector<uint64_t> out;
  for (int i = 0; i < nargs; i++) {
    if (rng.chance(0.35))
      out.push_back(edge[rng.below(sizeof(edge) / sizeof(edge[0]))]);
    else
      out.push_back(rng.next());
  }
  return out;
}

}  // namespace corpus
